#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "kinetra/fields.hpp"

namespace kinetra {

// ============================================================================
// Base operator vocabulary
// ============================================================================

enum class OpTag : std::uint8_t {
  Identity = 0,
  Advection = 1,   // v d/dx; stencil depends on where the input lives
  Projection = 2,  // velocity average broadcast back to all rows
  GradX = 3,       // centered d/dx, same stencil in every row
  LapX = 4,        // centered d^2/dx^2
  Square = 5,      // elementwise u^2 (nonlinear, off by default)
  ExpNegSq = 6,    // elementwise exp(-u^2) (nonlinear, off by default)
};

constexpr int kNumOpTags = 7;

const char* op_name(OpTag t);
OpTag op_from_name(const std::string& s);
bool op_is_linear(OpTag t);

// Fields live either on cell faces (the fluctuation g and anything aligned
// with it) or on cell centers (lifted density profiles, the rho equation).
// Advection is the only tag that cares:
//   - center input: staggered two-point difference, lands on faces
//     (the scheme's v d_x rho coupling term);
//   - face input in the g-equation (component 1): sign-split upwind
//     stencil of the requested order, stays on faces;
//   - face input in the rho-equation (component 2): staggered two-point
//     difference, lands on centers (the scheme's flux divergence).
// Every other tag keeps the location of its input.
enum class XLoc : std::uint8_t { Face = 0, Center = 1 };

XLoc loc_after(OpTag t, XLoc loc, int component);

// ============================================================================
// Stencils (periodic in x, uniform dx)
// ============================================================================

FieldG apply_identity(const FieldG& u);

// order 1: v+ backward / v- forward differences
// order 2: upwind-biased three-point stencils, (3u_j - 4u_{j-1} + u_{j-2})/(2dx)
//          for v > 0 and the mirrored version for v < 0
FieldG advect_upwind(const FieldG& u, const PhaseGrid& g, int order = 1);

// v * (u_{j+1} - u_j)/dx: center data differenced onto faces.
FieldG advect_center_to_face(const FieldG& u, const PhaseGrid& g);

// v * (u_j - u_{j-1})/dx: face data differenced onto centers.
FieldG advect_face_to_center(const FieldG& u, const PhaseGrid& g);

FieldG project(const FieldG& u, const PhaseGrid& g);

FieldG grad_x(const FieldG& u, const PhaseGrid& g);
FieldRho grad_x(const FieldRho& r, const PhaseGrid& g);
FieldG lap_x(const FieldG& u, const PhaseGrid& g);
FieldRho lap_x(const FieldRho& r, const PhaseGrid& g);

FieldG apply_op(OpTag t, const FieldG& u, const PhaseGrid& g, XLoc loc,
                int component, int adv_order);

// Euclidean adjoint (entrywise inner product) of a linear tag; throws
// ConfigError for nonlinear tags.  `loc` is the location of the forward
// input, exactly as passed to apply_op.
FieldG apply_op_adjoint(OpTag t, const FieldG& s, const PhaseGrid& g, XLoc loc,
                        int component, int adv_order);

// Discrete density flux divergence <v (g_{i+1/2} - g_{i-1/2})/dx> at centers,
// and its adjoint; the density equation advances with minus this quantity.
FieldRho flux_divergence(const FieldG& gface, const PhaseGrid& g);
FieldG flux_divergence_adjoint(const FieldRho& s, const PhaseGrid& g);

// ============================================================================
// Operator words
// ============================================================================

// A word is a composition of base tags, stored outermost first, applied to
// either g or a lifted density profile.  Words are kept as written: the
// engine never rewrites [Identity, Advection] into [Advection].
struct Word {
  static constexpr int kMaxLen = 8;
  std::uint8_t len = 0;
  std::array<std::uint8_t, kMaxLen> tag{};

  static Word single(OpTag t) {
    Word w;
    w.len = 1;
    w.tag[0] = static_cast<std::uint8_t>(t);
    return w;
  }
  OpTag at(int i) const { return static_cast<OpTag>(tag[i]); }
  bool operator==(const Word& o) const {
    if (len != o.len) return false;
    for (int i = 0; i < len; ++i)
      if (tag[i] != o.tag[i]) return false;
    return true;
  }
  // Length-then-lexicographic order; gives tables a stable layout.
  bool operator<(const Word& o) const {
    if (len != o.len) return len < o.len;
    for (int i = 0; i < len; ++i)
      if (tag[i] != o.tag[i]) return tag[i] < o.tag[i];
    return false;
  }
};

Word concat(const Word& outer, const Word& inner);
Word prepend(OpTag t, const Word& w);
std::string word_str(const Word& w, const std::string& arg);

struct WordHash {
  std::size_t operator()(const Word& w) const {
    std::size_t h = 1469598103934665603ull;
    h = (h ^ w.len) * 1099511628211ull;
    for (int i = 0; i < w.len; ++i)
      h = (h ^ w.tag[i]) * 1099511628211ull;
    return h;
  }
};

FieldG apply_word(const Word& w, const FieldG& u, const PhaseGrid& g,
                  XLoc start, int component, int adv_order);
XLoc word_landing(const Word& w, XLoc start, int component);

// Evaluates a fixed collection of words on one input field while sharing
// common innermost prefixes, and accumulates adjoints along the same plan.
class WordSet {
 public:
  static WordSet build(std::vector<Word> words);

  const std::vector<Word>& words() const { return words_; }
  int size() const { return static_cast<int>(words_.size()); }
  int index_of(const Word& w) const;  // -1 if absent

  // out[k] receives word k applied to u; out is resized as needed.
  void eval(const FieldG& u, const PhaseGrid& g, XLoc start, int component,
            int adv_order, std::vector<FieldG>& out) const;

  // Given one adjoint seed per word (empty fields mean zero), accumulates
  // the adjoint with respect to the input field into `into`.  Only defined
  // when every tag in every word is linear.
  void adjoint(const std::vector<FieldG>& seeds, const PhaseGrid& g,
               XLoc start, int component, int adv_order, FieldG& into) const;

 private:
  struct PlanNode {
    int parent = -1;  // -1 means the raw input
    OpTag op = OpTag::Identity;
  };
  std::vector<Word> words_;
  std::vector<PlanNode> plan_;
  std::vector<int> word_node_;
  std::unordered_map<Word, int, WordHash> index_;
};

}  // namespace kinetra
