#include "kinetra/operators.hpp"

#include <algorithm>

namespace kinetra {

namespace {

inline int wrap(int j, int n) {
  if (j >= n) return j - n;
  if (j < 0) return j + n;
  return j;
}

void check_field(const FieldG& u, const PhaseGrid& g, const char* who) {
  require(u.rows() == g.nv && u.cols() == g.nx,
          std::string(who) + ": field shape does not match grid");
}

void check_component(int component) {
  if (component != 1 && component != 2)
    throw ConfigError("operator component must be 1 (g) or 2 (rho)");
}

}  // namespace

const char* op_name(OpTag t) {
  switch (t) {
    case OpTag::Identity: return "identity";
    case OpTag::Advection: return "advection";
    case OpTag::Projection: return "projection";
    case OpTag::GradX: return "gradx";
    case OpTag::LapX: return "lapx";
    case OpTag::Square: return "square";
    case OpTag::ExpNegSq: return "expnegsq";
  }
  return "?";
}

OpTag op_from_name(const std::string& s) {
  for (int i = 0; i < kNumOpTags; ++i) {
    OpTag t = static_cast<OpTag>(i);
    if (s == op_name(t)) return t;
  }
  throw ConfigError("unknown operator tag: " + s);
}

bool op_is_linear(OpTag t) {
  return t != OpTag::Square && t != OpTag::ExpNegSq;
}

XLoc loc_after(OpTag t, XLoc loc, int component) {
  check_component(component);
  if (t != OpTag::Advection) return loc;
  if (loc == XLoc::Center) return XLoc::Face;
  // Face input: the g-equation keeps its transport term on faces (upwind),
  // the rho-equation differences face data down onto centers.
  return component == 1 ? XLoc::Face : XLoc::Center;
}

// ============================================================================
// Stencils
// ============================================================================

FieldG apply_identity(const FieldG& u) { return u; }

FieldG advect_upwind(const FieldG& u, const PhaseGrid& g, int order) {
  check_field(u, g, "advect_upwind");
  if (order != 1 && order != 2)
    throw ConfigError("advect_upwind: order must be 1 or 2");
  const int nx = g.nx;
  FieldG out(g.nv, nx);
  const VecX vp = g.v.cwiseMax(0.0);
  const VecX vm = g.v.cwiseMin(0.0);
  if (order == 1) {
    const double idx = 1.0 / g.dx;
    for (int j = 0; j < nx; ++j) {
      const int jm = wrap(j - 1, nx), jp = wrap(j + 1, nx);
      out.col(j) = idx * (vp.array() * (u.col(j) - u.col(jm)).array() +
                          vm.array() * (u.col(jp) - u.col(j)).array());
    }
  } else {
    const double i2dx = 1.0 / (2.0 * g.dx);
    for (int j = 0; j < nx; ++j) {
      const int jm = wrap(j - 1, nx), jm2 = wrap(j - 2, nx);
      const int jp = wrap(j + 1, nx), jp2 = wrap(j + 2, nx);
      out.col(j) =
          i2dx *
          (vp.array() *
               (3.0 * u.col(j) - 4.0 * u.col(jm) + u.col(jm2)).array() +
           vm.array() *
               (-3.0 * u.col(j) + 4.0 * u.col(jp) - u.col(jp2)).array());
    }
  }
  return out;
}

FieldG advect_center_to_face(const FieldG& u, const PhaseGrid& g) {
  check_field(u, g, "advect_center_to_face");
  const int nx = g.nx;
  const double idx = 1.0 / g.dx;
  FieldG out(g.nv, nx);
  for (int j = 0; j < nx; ++j) {
    const int jp = wrap(j + 1, nx);
    out.col(j) = idx * (g.v.array() * (u.col(jp) - u.col(j)).array());
  }
  return out;
}

FieldG advect_face_to_center(const FieldG& u, const PhaseGrid& g) {
  check_field(u, g, "advect_face_to_center");
  const int nx = g.nx;
  const double idx = 1.0 / g.dx;
  FieldG out(g.nv, nx);
  for (int j = 0; j < nx; ++j) {
    const int jm = wrap(j - 1, nx);
    out.col(j) = idx * (g.v.array() * (u.col(j) - u.col(jm)).array());
  }
  return out;
}

FieldG project(const FieldG& u, const PhaseGrid& g) {
  check_field(u, g, "project");
  FieldRho mean = vavg(u, g);
  return lift(mean, g.nv);
}

FieldG grad_x(const FieldG& u, const PhaseGrid& g) {
  check_field(u, g, "grad_x");
  const int nx = g.nx;
  const double i2dx = 1.0 / (2.0 * g.dx);
  FieldG out(g.nv, nx);
  for (int j = 0; j < nx; ++j)
    out.col(j) = i2dx * (u.col(wrap(j + 1, nx)) - u.col(wrap(j - 1, nx)));
  return out;
}

FieldRho grad_x(const FieldRho& r, const PhaseGrid& g) {
  require(r.size() == g.nx, "grad_x: vector size != nx");
  const int nx = g.nx;
  const double i2dx = 1.0 / (2.0 * g.dx);
  FieldRho out(nx);
  for (int j = 0; j < nx; ++j)
    out[j] = i2dx * (r[wrap(j + 1, nx)] - r[wrap(j - 1, nx)]);
  return out;
}

FieldG lap_x(const FieldG& u, const PhaseGrid& g) {
  check_field(u, g, "lap_x");
  const int nx = g.nx;
  const double idx2 = 1.0 / (g.dx * g.dx);
  FieldG out(g.nv, nx);
  for (int j = 0; j < nx; ++j)
    out.col(j) = idx2 * (u.col(wrap(j + 1, nx)) - 2.0 * u.col(j) +
                         u.col(wrap(j - 1, nx)));
  return out;
}

FieldRho lap_x(const FieldRho& r, const PhaseGrid& g) {
  require(r.size() == g.nx, "lap_x: vector size != nx");
  const int nx = g.nx;
  const double idx2 = 1.0 / (g.dx * g.dx);
  FieldRho out(nx);
  for (int j = 0; j < nx; ++j)
    out[j] = idx2 * (r[wrap(j + 1, nx)] - 2.0 * r[j] + r[wrap(j - 1, nx)]);
  return out;
}

FieldG apply_op(OpTag t, const FieldG& u, const PhaseGrid& g, XLoc loc,
                int component, int adv_order) {
  check_component(component);
  switch (t) {
    case OpTag::Identity: return u;
    case OpTag::Advection:
      if (loc == XLoc::Center) return advect_center_to_face(u, g);
      return component == 1 ? advect_upwind(u, g, adv_order)
                            : advect_face_to_center(u, g);
    case OpTag::Projection: return project(u, g);
    case OpTag::GradX: return grad_x(u, g);
    case OpTag::LapX: return lap_x(u, g);
    case OpTag::Square: return u.array().square().matrix();
    case OpTag::ExpNegSq: return (-u.array().square()).exp().matrix();
  }
  throw ConfigError("apply_op: bad tag");
}

// ============================================================================
// Adjoints (entrywise inner product, periodic wrap)
// ============================================================================

namespace {

FieldG advect_upwind_adjoint(const FieldG& s, const PhaseGrid& g, int order) {
  if (order != 1 && order != 2)
    throw ConfigError("advect_upwind_adjoint: order must be 1 or 2");
  const int nx = g.nx;
  FieldG out(g.nv, nx);
  const VecX vp = g.v.cwiseMax(0.0);
  const VecX vm = g.v.cwiseMin(0.0);
  if (order == 1) {
    const double idx = 1.0 / g.dx;
    for (int j = 0; j < nx; ++j) {
      const int jm = wrap(j - 1, nx), jp = wrap(j + 1, nx);
      out.col(j) = idx * (vp.array() * (s.col(j) - s.col(jp)).array() +
                          vm.array() * (s.col(jm) - s.col(j)).array());
    }
  } else {
    const double i2dx = 1.0 / (2.0 * g.dx);
    for (int j = 0; j < nx; ++j) {
      const int jm = wrap(j - 1, nx), jm2 = wrap(j - 2, nx);
      const int jp = wrap(j + 1, nx), jp2 = wrap(j + 2, nx);
      out.col(j) =
          i2dx *
          (vp.array() *
               (3.0 * s.col(j) - 4.0 * s.col(jp) + s.col(jp2)).array() +
           vm.array() *
               (-3.0 * s.col(j) + 4.0 * s.col(jm) - s.col(jm2)).array());
    }
  }
  return out;
}

FieldG advect_center_to_face_adjoint(const FieldG& s, const PhaseGrid& g) {
  const int nx = g.nx;
  const double idx = 1.0 / g.dx;
  FieldG out(g.nv, nx);
  for (int j = 0; j < nx; ++j) {
    const int jm = wrap(j - 1, nx);
    out.col(j) = idx * (g.v.array() * (s.col(jm) - s.col(j)).array());
  }
  return out;
}

FieldG advect_face_to_center_adjoint(const FieldG& s, const PhaseGrid& g) {
  const int nx = g.nx;
  const double idx = 1.0 / g.dx;
  FieldG out(g.nv, nx);
  for (int j = 0; j < nx; ++j) {
    const int jp = wrap(j + 1, nx);
    out.col(j) = idx * (g.v.array() * (s.col(j) - s.col(jp)).array());
  }
  return out;
}

FieldG project_adjoint(const FieldG& s, const PhaseGrid& g) {
  // P u = (1/2) ones * (vw^T u); transpose swaps the two rank-one factors.
  Eigen::RowVectorXd colsum = s.colwise().sum();
  return (0.5 * g.vw) * colsum;
}

}  // namespace

FieldG apply_op_adjoint(OpTag t, const FieldG& s, const PhaseGrid& g, XLoc loc,
                        int component, int adv_order) {
  check_field(s, g, "apply_op_adjoint");
  check_component(component);
  switch (t) {
    case OpTag::Identity: return s;
    case OpTag::Advection:
      if (loc == XLoc::Center) return advect_center_to_face_adjoint(s, g);
      return component == 1 ? advect_upwind_adjoint(s, g, adv_order)
                            : advect_face_to_center_adjoint(s, g);
    case OpTag::Projection: return project_adjoint(s, g);
    case OpTag::GradX: return -grad_x(s, g);  // antisymmetric stencil
    case OpTag::LapX: return lap_x(s, g);     // symmetric stencil
    case OpTag::Square:
    case OpTag::ExpNegSq:
      throw ConfigError("apply_op_adjoint: nonlinear tag has no adjoint");
  }
  throw ConfigError("apply_op_adjoint: bad tag");
}

FieldRho flux_divergence(const FieldG& gface, const PhaseGrid& g) {
  check_field(gface, g, "flux_divergence");
  return vavg(advect_face_to_center(gface, g), g);
}

FieldG flux_divergence_adjoint(const FieldRho& s, const PhaseGrid& g) {
  require(s.size() == g.nx, "flux_divergence_adjoint: size != nx");
  // Spread the center seed back through the velocity average, then through
  // the backward difference.
  FieldG t = (0.5 * g.vw) * s.transpose();
  return advect_face_to_center_adjoint(t, g);
}

// ============================================================================
// Words
// ============================================================================

Word concat(const Word& outer, const Word& inner) {
  require(outer.len + inner.len <= Word::kMaxLen, "word length overflow");
  Word w;
  w.len = static_cast<std::uint8_t>(outer.len + inner.len);
  for (int i = 0; i < outer.len; ++i) w.tag[i] = outer.tag[i];
  for (int i = 0; i < inner.len; ++i) w.tag[outer.len + i] = inner.tag[i];
  return w;
}

Word prepend(OpTag t, const Word& w) { return concat(Word::single(t), w); }

std::string word_str(const Word& w, const std::string& arg) {
  // Inside-out rendering: [Projection, Advection] on g -> "P(v∂x(g))".
  std::string s = arg;
  for (int i = w.len - 1; i >= 0; --i) {
    switch (w.at(i)) {
      case OpTag::Identity: break;  // neutral in display unless alone
      case OpTag::Advection: s = "v∂x(" + s + ")"; break;
      case OpTag::Projection: s = "P(" + s + ")"; break;
      case OpTag::GradX: s = "∂x(" + s + ")"; break;
      case OpTag::LapX: s = "∂xx(" + s + ")"; break;
      case OpTag::Square: s = "sq(" + s + ")"; break;
      case OpTag::ExpNegSq: s = "expnsq(" + s + ")"; break;
    }
  }
  return s;
}

FieldG apply_word(const Word& w, const FieldG& u, const PhaseGrid& g,
                  XLoc start, int component, int adv_order) {
  FieldG cur = u;
  XLoc loc = start;
  for (int i = w.len - 1; i >= 0; --i) {
    cur = apply_op(w.at(i), cur, g, loc, component, adv_order);
    loc = loc_after(w.at(i), loc, component);
  }
  return cur;
}

XLoc word_landing(const Word& w, XLoc start, int component) {
  XLoc loc = start;
  for (int i = w.len - 1; i >= 0; --i) loc = loc_after(w.at(i), loc, component);
  return loc;
}

WordSet WordSet::build(std::vector<Word> words) {
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());

  WordSet ws;
  ws.words_ = std::move(words);
  // Node key: (parent plan index, tag).  Chains are inserted innermost first
  // so shared suffixes of the written words become shared plan prefixes.
  std::unordered_map<std::uint64_t, int> seen;
  auto key = [](int parent, OpTag t) {
    return (std::uint64_t(std::uint32_t(parent)) << 8) |
           std::uint64_t(static_cast<std::uint8_t>(t));
  };
  for (std::size_t wi = 0; wi < ws.words_.size(); ++wi) {
    const Word& w = ws.words_[wi];
    int node = -1;
    for (int i = w.len - 1; i >= 0; --i) {
      auto k = key(node, w.at(i));
      auto it = seen.find(k);
      if (it == seen.end()) {
        ws.plan_.push_back({node, w.at(i)});
        node = static_cast<int>(ws.plan_.size()) - 1;
        seen.emplace(k, node);
      } else {
        node = it->second;
      }
    }
    ws.word_node_.push_back(node);
    ws.index_.emplace(w, static_cast<int>(wi));
  }
  return ws;
}

int WordSet::index_of(const Word& w) const {
  auto it = index_.find(w);
  return it == index_.end() ? -1 : it->second;
}

namespace {

// A node's stencil choice depends on where its input lives, which is fixed
// by the path from the raw input; compute the input location of every node.
std::vector<XLoc> plan_input_locs(const std::vector<std::pair<int, OpTag>>& nodes,
                                  XLoc start, int component) {
  std::vector<XLoc> in(nodes.size());
  std::vector<XLoc> land(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    in[i] = nodes[i].first < 0 ? start : land[nodes[i].first];
    land[i] = loc_after(nodes[i].second, in[i], component);
  }
  return in;
}

}  // namespace

void WordSet::eval(const FieldG& u, const PhaseGrid& g, XLoc start,
                   int component, int adv_order, std::vector<FieldG>& out) const {
  std::vector<std::pair<int, OpTag>> nodes(plan_.size());
  for (std::size_t i = 0; i < plan_.size(); ++i)
    nodes[i] = {plan_[i].parent, plan_[i].op};
  std::vector<XLoc> in_loc = plan_input_locs(nodes, start, component);

  std::vector<FieldG> node_val(plan_.size());
  for (std::size_t i = 0; i < plan_.size(); ++i) {
    const PlanNode& n = plan_[i];
    const FieldG& src = n.parent < 0 ? u : node_val[n.parent];
    node_val[i] = apply_op(n.op, src, g, in_loc[i], component, adv_order);
  }
  out.resize(words_.size());
  for (std::size_t wi = 0; wi < words_.size(); ++wi) {
    int node = word_node_[wi];
    out[wi] = node < 0 ? u : node_val[node];
  }
}

void WordSet::adjoint(const std::vector<FieldG>& seeds, const PhaseGrid& g,
                      XLoc start, int component, int adv_order,
                      FieldG& into) const {
  require(seeds.size() == words_.size(), "WordSet::adjoint: seed count");
  std::vector<std::pair<int, OpTag>> nodes(plan_.size());
  for (std::size_t i = 0; i < plan_.size(); ++i)
    nodes[i] = {plan_[i].parent, plan_[i].op};
  std::vector<XLoc> in_loc = plan_input_locs(nodes, start, component);

  std::vector<FieldG> node_adj(plan_.size());
  auto add_to = [&](FieldG& dst, const FieldG& src) {
    if (dst.size() == 0)
      dst = src;
    else
      dst += src;
  };
  for (std::size_t wi = 0; wi < words_.size(); ++wi) {
    if (seeds[wi].size() == 0) continue;
    int node = word_node_[wi];
    if (node < 0)
      add_to(into, seeds[wi]);
    else
      add_to(node_adj[node], seeds[wi]);
  }
  for (int i = static_cast<int>(plan_.size()) - 1; i >= 0; --i) {
    if (node_adj[i].size() == 0) continue;
    const PlanNode& n = plan_[i];
    FieldG up = apply_op_adjoint(n.op, node_adj[i], g, in_loc[i], component,
                                 adv_order);
    if (n.parent < 0)
      add_to(into, up);
    else
      add_to(node_adj[n.parent], up);
  }
  if (into.size() == 0) into = FieldG::Zero(g.nv, g.nx);
}

}  // namespace kinetra
