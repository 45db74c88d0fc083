#pragma once

#include <string>

#include "meshrt/plan.hpp"

namespace meshrt {

enum class SchemeKind { Base, Residual, Anchor, AnchorStar, StaticComb, DynamicComb, Mesh };

/// Source multiplied by the second combination coefficient. `Previous`
/// substitutes h(t) for h(0) so a pinned static combination reproduces the
/// residual rule; it is not exposed through the config string.
enum class CombSource { Initial, Previous };

struct SchemeSpec {
  SchemeKind kind = SchemeKind::Base;
  int mesh_slots = 0;       // B; Mesh only. 0 means "use the default rule".
  bool share_core = true;   // false: one independent core stack per loop step
  CombSource comb_second = CombSource::Initial;

  bool operator==(const SchemeSpec&) const = default;
};

/// base | residual | anchor | anchor_star | static_comb | dynamic_comb | mesh
SchemeKind parse_scheme_kind(const std::string& s);
std::string to_string(SchemeKind k);

/// Resolves defaults against a plan (B = n_loop + 3 for mesh) and enforces the
/// slot floor and the weight-sharing restriction. Throws ConfigError.
SchemeSpec resolve_scheme(SchemeSpec spec, const LayerPlan& plan);

}  // namespace meshrt
