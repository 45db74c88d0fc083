#include "meshrt/scheme.hpp"

#include "meshrt/errors.hpp"
#include "meshrt/mesh.hpp"

namespace meshrt {

SchemeKind parse_scheme_kind(const std::string& s) {
  if (s == "base") return SchemeKind::Base;
  if (s == "residual") return SchemeKind::Residual;
  if (s == "anchor") return SchemeKind::Anchor;
  if (s == "anchor_star") return SchemeKind::AnchorStar;
  if (s == "static_comb") return SchemeKind::StaticComb;
  if (s == "dynamic_comb") return SchemeKind::DynamicComb;
  if (s == "mesh") return SchemeKind::Mesh;
  throw ConfigError("unknown scheme '" + s +
                    "' (expected base, residual, anchor, anchor_star, static_comb, dynamic_comb or mesh)");
}

std::string to_string(SchemeKind k) {
  switch (k) {
    case SchemeKind::Base: return "base";
    case SchemeKind::Residual: return "residual";
    case SchemeKind::Anchor: return "anchor";
    case SchemeKind::AnchorStar: return "anchor_star";
    case SchemeKind::StaticComb: return "static_comb";
    case SchemeKind::DynamicComb: return "dynamic_comb";
    case SchemeKind::Mesh: return "mesh";
  }
  return "?";
}

SchemeSpec resolve_scheme(SchemeSpec spec, const LayerPlan& plan) {
  if (spec.kind == SchemeKind::Mesh) {
    if (spec.mesh_slots == 0) spec.mesh_slots = default_buffer_len(plan.n_loop);
    if (spec.mesh_slots < plan.n_loop + 1)
      throw ConfigError("mesh buffer of " + std::to_string(spec.mesh_slots) + " slots is below the floor n_loop + 1 = " +
                        std::to_string(plan.n_loop + 1));
  } else {
    if (spec.mesh_slots != 0) throw ConfigError("buffer size is only meaningful for the mesh scheme");
    if (!spec.share_core && spec.kind != SchemeKind::Base)
      throw ConfigError("unshared cores are only supported for mesh or plain base recursion");
  }
  return spec;
}

}  // namespace meshrt
