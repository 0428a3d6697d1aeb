#include "equistruct/group.hpp"

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace equistruct {

namespace {

void check_group_axioms(const FiniteGroup& g) {
  const int n = g.order;
  if (n <= 0) throw std::invalid_argument("group order must be positive");
  if (g.compose.rows() != n || g.compose.cols() != n)
    throw std::invalid_argument("composition table shape mismatch");
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      if (g.compose(a, b) < 0 || g.compose(a, b) >= n)
        throw std::invalid_argument("composition table not closed");
  for (int a = 0; a < n; ++a)
    if (g.compose(g.identity, a) != a || g.compose(a, g.identity) != a)
      throw std::invalid_argument("identity element does not act as identity");
  for (int a = 0; a < n; ++a)
    if (g.compose(a, g.inverse(a)) != g.identity ||
        g.compose(g.inverse(a), a) != g.identity)
      throw std::invalid_argument("inverse table inconsistent");
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      for (int c = 0; c < n; ++c)
        if (g.compose(g.compose(a, b), c) != g.compose(a, g.compose(b, c)))
          throw std::invalid_argument("composition table not associative");
}

}  // namespace

FiniteGroup make_group(const IntMatrix& table) {
  FiniteGroup g;
  g.order = static_cast<int>(table.rows());
  g.compose = table;
  // Locate the identity: the element whose row and column are the identity map.
  g.identity = -1;
  for (int e = 0; e < g.order; ++e) {
    bool ok = true;
    for (int a = 0; a < g.order && ok; ++a)
      ok = table(e, a) == a && table(a, e) == a;
    if (ok) {
      g.identity = e;
      break;
    }
  }
  if (g.identity < 0) throw std::invalid_argument("no identity element");
  g.inverse = IntVector::Constant(g.order, -1);
  for (int a = 0; a < g.order; ++a) {
    for (int b = 0; b < g.order; ++b)
      if (table(a, b) == g.identity && table(b, a) == g.identity) {
        g.inverse(a) = b;
        break;
      }
    if (g.inverse(a) < 0) throw std::invalid_argument("missing inverse");
  }
  check_group_axioms(g);
  return g;
}

FiniteGroup make_cyclic_group(int n) {
  if (n < 1) throw std::invalid_argument("cyclic group order must be >= 1");
  IntMatrix table(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) table(i, j) = (i + j) % n;
  return make_group(table);
}

Representation::Representation(FiniteGroup group, std::vector<Matrix> matrices)
    : group_(std::move(group)), matrices_(std::move(matrices)) {
  if (static_cast<int>(matrices_.size()) != group_.order)
    throw std::invalid_argument("need one matrix per group element");
  dim_ = static_cast<int>(matrices_[0].rows());
  for (const Matrix& m : matrices_)
    if (m.rows() != dim_ || m.cols() != dim_)
      throw std::invalid_argument("representation matrices must be square and equal-sized");
}

Representation Representation::permutation(const FiniteGroup& group,
                                           std::vector<std::vector<int>> perms) {
  const int n = group.order;
  if (static_cast<int>(perms.size()) != n)
    throw std::invalid_argument("need one permutation per group element");
  const int d = static_cast<int>(perms[0].size());
  for (const auto& p : perms) {
    if (static_cast<int>(p.size()) != d)
      throw std::invalid_argument("permutations must have equal length");
    std::vector<bool> seen(d, false);
    for (int v : p) {
      if (v < 0 || v >= d || seen[v])
        throw std::invalid_argument("not a permutation");
      seen[v] = true;
    }
  }
  for (int j = 0; j < d; ++j)
    if (perms[group.identity][j] != j)
      throw std::invalid_argument("identity element must carry the identity permutation");
  // perm(g) o perm(h) must equal perm(gh).
  for (int g = 0; g < n; ++g)
    for (int h = 0; h < n; ++h)
      for (int j = 0; j < d; ++j)
        if (perms[g][perms[h][j]] != perms[group.compose(g, h)][j]) {
          std::ostringstream msg;
          msg << "permutations do not form a representation: composition "
                 "mismatch at (g, h) = ("
              << g << ", " << h << ")";
          throw std::invalid_argument(msg.str());
        }
  std::vector<Matrix> mats;
  mats.reserve(n);
  for (int g = 0; g < n; ++g) {
    Matrix m = Matrix::Zero(d, d);
    for (int j = 0; j < d; ++j) m(perms[g][j], j) = 1.0;
    mats.push_back(std::move(m));
  }
  Representation rep(group, std::move(mats));
  rep.perms_ = std::move(perms);
  return rep;
}

Representation Representation::identity(const FiniteGroup& group, int dim) {
  std::vector<std::vector<int>> perms(group.order);
  for (auto& p : perms) {
    p.resize(dim);
    for (int j = 0; j < dim; ++j) p[j] = j;
  }
  return permutation(group, std::move(perms));
}

Representation Representation::regular(const FiniteGroup& group) {
  std::vector<std::vector<int>> perms(group.order);
  for (int g = 0; g < group.order; ++g) {
    perms[g].resize(group.order);
    for (int h = 0; h < group.order; ++h) perms[g][h] = group.compose(g, h);
  }
  return permutation(group, std::move(perms));
}

RepresentationReport verify_representation(const Representation& rep, double tol) {
  const int n = rep.group().order;
  const int d = rep.dim();
  double residual = (rep.matrix(rep.group().identity) - Matrix::Identity(d, d))
                        .cwiseAbs()
                        .maxCoeff();
  for (int g = 0; g < n; ++g)
    for (int h = 0; h < n; ++h) {
      double r = (rep.matrix(g) * rep.matrix(h) - rep.matrix(rep.group().compose(g, h)))
                     .cwiseAbs()
                     .maxCoeff();
      residual = std::max(residual, r);
    }
  return {residual, residual <= tol};
}

Representation augment_bias(const Representation& rep) {
  const int d = rep.dim();
  std::vector<Matrix> mats;
  mats.reserve(rep.group().order);
  for (int g = 0; g < rep.group().order; ++g) {
    Matrix m = Matrix::Zero(d + 1, d + 1);
    m.topLeftCorner(d, d) = rep.matrix(g);
    m(d, d) = 1.0;
    mats.push_back(std::move(m));
  }
  return Representation(rep.group(), std::move(mats));
}

SpatialAction::SpatialAction(const FiniteGroup& group, int height, int width,
                             const CoordMap& map)
    : height_(height), width_(width) {
  dest_.resize(group.order);
  for (int g = 0; g < group.order; ++g) {
    dest_[g].assign(pixels(), -1);
    for (int r = 0; r < height; ++r)
      for (int c = 0; c < width; ++c) {
        auto [rr, cc] = map(g, r, c);
        if (rr < 0 || rr >= height || cc < 0 || cc >= width)
          throw std::invalid_argument("spatial map leaves the grid");
        dest_[g][r * width + c] = rr * width + cc;
      }
  }
  // Must be bijective per element, the identity at e, and compose with the table.
  for (int g = 0; g < group.order; ++g) {
    std::vector<bool> seen(pixels(), false);
    for (int p = 0; p < pixels(); ++p) {
      if (seen[dest_[g][p]]) throw std::invalid_argument("spatial map not bijective");
      seen[dest_[g][p]] = true;
    }
  }
  for (int p = 0; p < pixels(); ++p)
    if (dest_[group.identity][p] != p)
      throw std::invalid_argument("spatial map must fix pixels at the identity");
  for (int g = 0; g < group.order; ++g)
    for (int h = 0; h < group.order; ++h)
      for (int p = 0; p < pixels(); ++p)
        if (dest_[g][dest_[h][p]] != dest_[group.compose(g, h)][p])
          throw std::invalid_argument("spatial maps do not respect the group table");
}

SpatialAction SpatialAction::rotations90(const FiniteGroup& group, int height,
                                         int width) {
  if (group.order == 1)
    return SpatialAction(group, height, width,
                         [](int, int r, int c) { return std::make_pair(r, c); });
  if (group.order == 2)
    return SpatialAction(group, height, width, [=](int g, int r, int c) {
      return g == 0 ? std::make_pair(r, c)
                    : std::make_pair(height - 1 - r, width - 1 - c);
    });
  if (group.order == 4) {
    if (height != width)
      throw std::invalid_argument("90-degree rotations need a square grid");
    return SpatialAction(group, height, width, [=](int g, int r, int c) {
      for (int k = 0; k < g; ++k) {
        int nr = c, nc = height - 1 - r;
        r = nr;
        c = nc;
      }
      return std::make_pair(r, c);
    });
  }
  throw std::invalid_argument("rotations90 supports groups of order 1, 2, 4");
}

Matrix rot90_cw(const Matrix& image, int k) {
  k = ((k % 4) + 4) % 4;
  Matrix out = image;
  for (int i = 0; i < k; ++i) {
    Matrix next(out.cols(), out.rows());
    for (Index r = 0; r < out.rows(); ++r)
      for (Index c = 0; c < out.cols(); ++c) next(c, out.rows() - 1 - r) = out(r, c);
    out = std::move(next);
  }
  return out;
}

RepresentationPair::RepresentationPair(Representation in, Representation out)
    : RepresentationPair(std::move(in), std::move(out), SpatialAction(), 0) {}

RepresentationPair::RepresentationPair(Representation in, Representation out,
                                       SpatialAction spatial, int fixed_slots)
    : in_(std::move(in)),
      out_(std::move(out)),
      spatial_(std::move(spatial)),
      fixed_slots_(fixed_slots) {
  if (in_.group().order != out_.group().order ||
      in_.group().compose != out_.group().compose)
    throw std::invalid_argument("input and output representations must share the group");
  if (fixed_slots_ < 0 || fixed_slots_ > in_.dim())
    throw std::invalid_argument("invalid fixed slot count");
  materialize();
}

WeightShape RepresentationPair::shape() const {
  return {out_.dim(), in_.dim(), spatial_.trivial() ? 1 : spatial_.height(),
          spatial_.trivial() ? 1 : spatial_.width(), fixed_slots_};
}

void RepresentationPair::materialize() {
  const int slots = in_.dim();
  const int px = spatial_.trivial() ? 1 : spatial_.pixels();
  const int cols = slots * px;
  const int spatial_slots = slots - fixed_slots_;
  in_full_.resize(order());
  for (int g = 0; g < order(); ++g) {
    const Matrix& slot_mat = in_.matrix(g);
    // The slot matrix must not mix spatially-transformed and fixed slots.
    if (fixed_slots_ > 0 && !spatial_.trivial()) {
      if (slot_mat.topRightCorner(spatial_slots, fixed_slots_).cwiseAbs().maxCoeff() > 0 ||
          slot_mat.bottomLeftCorner(fixed_slots_, spatial_slots).cwiseAbs().maxCoeff() > 0)
        throw std::invalid_argument("slot matrix mixes spatial and fixed slots");
    }
    Matrix full = Matrix::Zero(cols, cols);
    for (int sc = 0; sc < slots; ++sc)
      for (int sr = 0; sr < slots; ++sr) {
        double v = slot_mat(sr, sc);
        if (v == 0.0) continue;
        bool spatial_block = sc < spatial_slots && sr < spatial_slots;
        for (int p = 0; p < px; ++p) {
          int pr = spatial_block ? spatial_.image(g, p) : p;
          full(sr * px + pr, sc * px + p) = v;
        }
      }
    in_full_[g] = std::move(full);
  }
}

void RepresentationPair::check_shape(const Matrix& weight) const {
  WeightShape s = shape();
  if (weight.rows() != s.d_out || weight.cols() != s.cols())
    throw std::invalid_argument("weight shape incompatible with representation pair");
}

Matrix RepresentationPair::apply_in(int g, const Matrix& weight) const {
  check_shape(weight);
  return weight * in_full_[g];
}

Matrix RepresentationPair::apply_out(int g, const Matrix& weight) const {
  check_shape(weight);
  return out_.matrix(g) * weight;
}

Matrix RepresentationPair::conjugate(int g, const Matrix& weight) const {
  check_shape(weight);
  return out_.inverse_matrix(g) * weight * in_full_[g];
}

CartPoleReps cartpole_representations() {
  CartPoleReps reps{make_cyclic_group(2),
                    Representation(make_cyclic_group(2),
                                   {Matrix::Identity(4, 4), -Matrix::Identity(4, 4)}),
                    Representation::regular(make_cyclic_group(2)),
                    Representation::permutation(make_cyclic_group(2), {{0, 1}, {1, 0}}),
                    Representation::identity(make_cyclic_group(2), 1)};
  return reps;
}

RepresentationPair CartPoleReps::first_layer() const {
  return {augment_bias(state), intermediate, SpatialAction(), 1};
}
RepresentationPair CartPoleReps::hidden_layer() const {
  return {augment_bias(intermediate), intermediate, SpatialAction(), 1};
}
RepresentationPair CartPoleReps::policy_head() const {
  return {augment_bias(intermediate), policy, SpatialAction(), 1};
}
RepresentationPair CartPoleReps::value_head() const {
  return {augment_bias(intermediate), value, SpatialAction(), 1};
}

GridWorldReps gridworld_representations() {
  FiniteGroup c4 = make_cyclic_group(4);
  // Clockwise rotation sends up -> right -> down -> left; the no-op is fixed.
  std::vector<std::vector<int>> action_perms(4);
  for (int g = 0; g < 4; ++g) {
    action_perms[g] = {0, 0, 0, 0, 0};
    for (int a = 1; a <= 4; ++a) action_perms[g][a] = 1 + (a - 1 + g) % 4;
  }
  GridWorldReps reps{c4,
                     Representation::identity(c4, 1),
                     Representation::regular(c4),
                     Representation::permutation(c4, std::move(action_perms)),
                     Representation::identity(c4, 1)};
  return reps;
}

RepresentationPair GridWorldReps::conv_layer(int in_repr, int filter) const {
  Representation in = in_repr == 1 ? input : intermediate;
  return {augment_bias(in), intermediate,
          SpatialAction::rotations90(group, filter, filter), 1};
}
RepresentationPair GridWorldReps::first_conv() const { return conv_layer(1, 7); }
RepresentationPair GridWorldReps::second_conv() const { return conv_layer(4, 5); }
RepresentationPair GridWorldReps::dense_layer() const {
  return {augment_bias(intermediate), intermediate, SpatialAction(), 1};
}
RepresentationPair GridWorldReps::policy_head() const {
  return {augment_bias(intermediate), policy, SpatialAction(), 1};
}
RepresentationPair GridWorldReps::value_head() const {
  return {augment_bias(intermediate), value, SpatialAction(), 1};
}

Representation representation_from_text(std::istream& in) {
  std::string word;
  int order = 0, dim = 0;
  in >> word;
  if (word != "representation")
    throw std::runtime_error("expected a 'representation' block");
  in >> word >> order >> word >> dim;
  if (order < 1 || dim < 1) throw std::runtime_error("bad representation header");
  std::vector<Matrix> mats(order);
  for (int g = 0; g < order; ++g) {
    int index = -1;
    in >> word >> index;
    if (word != "element" || index != g)
      throw std::runtime_error("representation elements must be listed in order");
    mats[g] = Matrix(dim, dim);
    for (int r = 0; r < dim; ++r)
      for (int c = 0; c < dim; ++c)
        if (!(in >> mats[g](r, c)))
          throw std::runtime_error("truncated representation matrix");
  }
  return Representation(make_cyclic_group(order), std::move(mats));
}

RepresentationPair load_pair_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open pair file: " + path);
  std::optional<Representation> rep_in, rep_out;
  int spatial_h = 0, spatial_w = 0, fixed_slots = 0;
  std::string word;
  while (in >> word) {
    if (word == "in")
      rep_in = representation_from_text(in);
    else if (word == "out")
      rep_out = representation_from_text(in);
    else if (word == "spatial") {
      std::string kind;
      in >> kind >> spatial_h >> spatial_w;
      if (kind != "rot90") throw std::runtime_error("unknown spatial action: " + kind);
    } else if (word == "fixed_slots")
      in >> fixed_slots;
    else
      throw std::runtime_error("unknown pair directive: " + word);
  }
  if (!rep_in || !rep_out) throw std::runtime_error("pair file needs in and out blocks");
  if (spatial_h > 0)
    return {*rep_in, *rep_out,
            SpatialAction::rotations90(rep_in->group(), spatial_h, spatial_w),
            fixed_slots};
  return {*rep_in, *rep_out, SpatialAction(), fixed_slots};
}

std::string to_text(const Representation& rep) {
  std::ostringstream out;
  out << "representation order " << rep.group().order << " dim " << rep.dim() << "\n";
  for (int g = 0; g < rep.group().order; ++g) {
    out << "element " << g << "\n";
    for (int r = 0; r < rep.dim(); ++r) {
      for (int c = 0; c < rep.dim(); ++c) {
        if (c) out << ' ';
        out << rep.matrix(g)(r, c);
      }
      out << "\n";
    }
  }
  return out.str();
}

}  // namespace equistruct
