#include "meshrt/plan.hpp"

#include <cctype>

#include "meshrt/errors.hpp"

namespace meshrt {

namespace {

constexpr long kMaxField = 1'000'000;

class PlanLexer {
 public:
  explicit PlanLexer(std::string_view s) : s_(s) {}

  int integer(const char* what) {
    const std::size_t start = pos_;
    long v = 0;
    while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
      v = v * 10 + (s_[pos_] - '0');
      if (v > kMaxField) throw RangeError(std::string(what) + " exceeds " + std::to_string(kMaxField));
      ++pos_;
    }
    if (pos_ == start) throw ParseError(std::string("expected digits for ") + what, pos_);
    if (v == 0) throw RangeError(std::string(what) + " must be >= 1");
    return static_cast<int>(v);
  }

  void expect(char c) {
    if (pos_ >= s_.size() || s_[pos_] != c) throw ParseError(std::string("expected '") + c + "'", pos_);
    ++pos_;
  }

  bool at_end() const { return pos_ == s_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
};

}  // namespace

LayerPlan parse_plan(std::string_view text) {
  if (text.empty()) throw ParseError("empty layer plan", 0);
  PlanLexer lex(text);
  LayerPlan plan;
  const int first = lex.integer("layer count");
  if (lex.at_end()) {
    plan.l_pre = 0;
    plan.l_core = first;
    plan.n_loop = 1;
    plan.l_coda = 0;
    plan.recursive = false;
    return plan;
  }
  plan.l_pre = first;
  lex.expect('+');
  plan.l_core = lex.integer("core layers");
  lex.expect('R');
  plan.n_loop = lex.integer("loop count");
  lex.expect('+');
  plan.l_coda = lex.integer("coda layers");
  if (!lex.at_end()) throw ParseError("trailing characters after layer plan", lex.pos());
  plan.recursive = true;
  return plan;
}

std::string format_plan(const LayerPlan& plan) {
  if (!plan.recursive) return std::to_string(plan.l_core);
  return std::to_string(plan.l_pre) + "+" + std::to_string(plan.l_core) + "R" + std::to_string(plan.n_loop) + "+" +
         std::to_string(plan.l_coda);
}

double param_reduction(const LayerPlan& plan) {
  if (plan.n_compute() <= 0) throw RangeError("plan has no layers");
  return 100.0 * (1.0 - static_cast<double>(plan.unique_layers()) / static_cast<double>(plan.n_compute()));
}

}  // namespace meshrt
