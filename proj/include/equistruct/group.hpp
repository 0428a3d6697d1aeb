#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "equistruct/types.hpp"

namespace equistruct {

/// Finite group given by its composition table. compose(i, j) is the index of
/// g_i * g_j; the constructor checks closure, identity, inverses and
/// associativity exactly (integer checks).
struct FiniteGroup {
  int order = 1;
  IntMatrix compose;
  int identity = 0;
  IntVector inverse;

  int times(int g, int h) const { return compose(g, h); }
  int inv(int g) const { return inverse(g); }
};

/// Builds a group from a composition table; throws std::invalid_argument on
/// any axiom violation.
FiniteGroup make_group(const IntMatrix& table);

/// Cyclic group Z_n with compose(i, j) = (i + j) mod n.
FiniteGroup make_cyclic_group(int n);

/// Matrix representation of a finite group: one dim x dim matrix per element,
/// with rho(e) = I and rho(g) rho(h) = rho(gh). Permutation representations
/// also keep the index form for O(d) application: perm(g)[j] is where basis
/// vector j is sent, i.e. rho(g) e_j = e_perm(g)[j].
class Representation {
 public:
  Representation(FiniteGroup group, std::vector<Matrix> matrices);

  /// Permutation representation from one permutation per element; throws if
  /// the permutations do not compose according to the group table, naming the
  /// offending pair (g, h).
  static Representation permutation(const FiniteGroup& group,
                                    std::vector<std::vector<int>> perms);

  /// All-identity representation of the given dimension (invariant outputs).
  static Representation identity(const FiniteGroup& group, int dim);

  /// Regular representation: the group permuting itself, dim = |G|.
  static Representation regular(const FiniteGroup& group);

  const FiniteGroup& group() const { return group_; }
  int dim() const { return dim_; }
  const Matrix& matrix(int g) const { return matrices_[g]; }
  /// rho(g)^{-1}, taken as rho(g^{-1}).
  const Matrix& inverse_matrix(int g) const { return matrices_[group_.inv(g)]; }

  bool is_permutation() const { return !perms_.empty(); }
  const std::vector<int>& perm(int g) const { return perms_[g]; }

 private:
  FiniteGroup group_;
  int dim_;
  std::vector<Matrix> matrices_;
  std::vector<std::vector<int>> perms_;  // empty unless permutation-built
};

struct RepresentationReport {
  double max_residual = 0.0;
  bool ok = false;
};

/// Checks rho(e) = I and rho(g) rho(h) = rho(gh) within tol; reports the
/// worst infinity-norm residual over all pairs.
RepresentationReport verify_representation(const Representation& rep,
                                           double tol = 1e-10);

/// Appends one trailing slot fixed by every element (the merged-bias slot).
Representation augment_bias(const Representation& rep);

/// Per-element permutation of an h x w grid, built from a coordinate map so
/// spatial transforms are index remaps rather than explicit matrices.
class SpatialAction {
 public:
  /// Image of pixel (r, c) under element g.
  using CoordMap = std::function<std::pair<int, int>(int g, int r, int c)>;

  SpatialAction() = default;  // trivial action on a 1x1 grid
  SpatialAction(const FiniteGroup& group, int height, int width,
                const CoordMap& map);

  /// Element k acts as clockwise rotation by k * (360/|G|) degrees; supports
  /// cyclic groups of order 1, 2 and 4 (order 4 needs a square grid).
  static SpatialAction rotations90(const FiniteGroup& group, int height,
                                   int width);

  bool trivial() const { return dest_.empty(); }
  int height() const { return height_; }
  int width() const { return width_; }
  int pixels() const { return height_ * width_; }
  /// Flat destination index of flat pixel p under element g.
  int image(int g, int p) const { return trivial() ? p : dest_[g][p]; }

 private:
  int height_ = 1, width_ = 1;
  std::vector<std::vector<int>> dest_;
};

/// Rotates a matrix clockwise by k * 90 degrees.
Matrix rot90_cw(const Matrix& image, int k = 1);

/// Shape of a layer weight tensor: d_out x d_in slots over an h x w filter
/// support; bias_slots of the input slots are merged-bias columns (constant-1
/// inputs, fixed by the group action).
struct WeightShape {
  int d_out = 0;
  int d_in = 0;
  int height = 1;
  int width = 1;
  int bias_slots = 0;

  int spatial_size() const { return height * width; }
  int cols() const { return d_in * spatial_size(); }
  int dim() const { return d_out * cols(); }
  bool operator==(const WeightShape&) const = default;
};

/// A pair of transformation operators (L_g, K_g) acting on a layer's input
/// and output, with an optional spatial action on the filter support. The
/// trailing `fixed_slots` input slots (merged bias) are exempt from the
/// spatial action. Materializes the full input-side matrices on the flattened
/// (slot, pixel) axis once; filter supports are small so this stays cheap.
class RepresentationPair {
 public:
  RepresentationPair(Representation in, Representation out);
  RepresentationPair(Representation in, Representation out,
                     SpatialAction spatial, int fixed_slots);

  const Representation& in() const { return in_; }
  const Representation& out() const { return out_; }
  const SpatialAction& spatial() const { return spatial_; }
  const FiniteGroup& group() const { return in_.group(); }
  int order() const { return in_.group().order; }

  WeightShape shape() const;

  /// L_g on the flattened input axis (cols x cols).
  const Matrix& in_full(int g) const { return in_full_[g]; }
  /// W L_g
  Matrix apply_in(int g, const Matrix& weight) const;
  /// K_g W
  Matrix apply_out(int g, const Matrix& weight) const;
  /// K_g^{-1} W L_g
  Matrix conjugate(int g, const Matrix& weight) const;

  void check_shape(const Matrix& weight) const;

 private:
  void materialize();

  Representation in_;
  Representation out_;
  SpatialAction spatial_;
  int fixed_slots_ = 0;
  std::vector<Matrix> in_full_;
};

/// Shipped CartPole transformation operators: reflection group C2 acting by
/// state negation, hidden-channel swap, action swap, and an invariant value.
struct CartPoleReps {
  FiniteGroup group;            // C2
  Representation state;         // {I4, -I4}
  Representation intermediate;  // regular C2 (dim 2)
  Representation policy;        // {I2, swap}
  Representation value;         // all-identity, dim 1

  RepresentationPair first_layer() const;   // state (bias-augmented) -> intermediate
  RepresentationPair hidden_layer() const;  // intermediate -> intermediate
  RepresentationPair policy_head() const;   // intermediate -> policy
  RepresentationPair value_head() const;    // intermediate -> value
};
CartPoleReps cartpole_representations();

/// Shipped grid-world transformation operators: rotation group C4 acting by
/// 90-degree image rotations, cyclic channel rolls, and a 5-action
/// permutation fixing the no-op.
struct GridWorldReps {
  FiniteGroup group;            // C4
  Representation input;         // trivial, dim 1 (binary image channel)
  Representation intermediate;  // regular C4 (dim 4)
  Representation policy;        // 5 actions, no-op fixed
  Representation value;         // all-identity, dim 1

  RepresentationPair conv_layer(int in_channels_repr, int filter) const;
  RepresentationPair first_conv() const;   // 7x7 filter, trivial input repr
  RepresentationPair second_conv() const;  // 5x5 filter, regular input repr
  RepresentationPair dense_layer() const;  // intermediate -> intermediate
  RepresentationPair policy_head() const;  // intermediate -> policy
  RepresentationPair value_head() const;   // intermediate -> value
};
GridWorldReps gridworld_representations();

/// Structured text dump (element index -> matrix rows), used by the CLI.
std::string to_text(const Representation& rep);

/// Parses the to_text format back into a representation (cyclic group
/// assumed, matching every shipped group).
Representation representation_from_text(std::istream& in);

/// User-supplied pair file: an `in` and an `out` representation block, with
/// optional `spatial rot90 H W` and `fixed_slots N` directives.
RepresentationPair load_pair_file(const std::string& path);

}  // namespace equistruct
