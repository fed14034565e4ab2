#ifndef PCDAL_PERTURBATION_HPP
#define PCDAL_PERTURBATION_HPP

#include <algorithm>
#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pcdal/error.hpp"
#include "pcdal/tensor.hpp"

namespace pcdal {

enum class PerturbationKind { Identity, FlipH, FlipV, FlipHV, Rot90, Rot180, Rot270 };

/// Pair of spatial axes a perturbation acts in. Rows are the first named
/// axis, columns the second; FlipH reverses columns, FlipV reverses rows.
enum class Plane { HeightWidth, DepthHeight, DepthWidth };

/// One elementary invertible spatial transform. Rotations are clockwise with
/// row 0 at the top and column 0 at the left.
struct Perturbation {
  PerturbationKind kind = PerturbationKind::Identity;
  Plane plane = Plane::HeightWidth;

  friend bool operator==(const Perturbation&, const Perturbation&) = default;
};

inline constexpr std::array<std::pair<PerturbationKind, std::string_view>, 7> kKindNames{{
    {PerturbationKind::Identity, "identity"},
    {PerturbationKind::FlipH, "flip_h"},
    {PerturbationKind::FlipV, "flip_v"},
    {PerturbationKind::FlipHV, "flip_hv"},
    {PerturbationKind::Rot90, "rot90"},
    {PerturbationKind::Rot180, "rot180"},
    {PerturbationKind::Rot270, "rot270"},
}};

inline constexpr std::array<PerturbationKind, 7> kAllKinds{
    PerturbationKind::Identity, PerturbationKind::FlipH,  PerturbationKind::FlipV,
    PerturbationKind::FlipHV,   PerturbationKind::Rot90,  PerturbationKind::Rot180,
    PerturbationKind::Rot270};

inline std::string to_string(PerturbationKind k) {
  for (const auto& [kind, name] : kKindNames)
    if (kind == k) return std::string(name);
  return "?";
}

inline std::string to_string(Plane p) {
  switch (p) {
    case Plane::HeightWidth: return "hw";
    case Plane::DepthHeight: return "dh";
    case Plane::DepthWidth: return "dw";
  }
  return "?";
}

inline Plane parse_plane(std::string_view s) {
  if (s == "hw") return Plane::HeightWidth;
  if (s == "dh") return Plane::DepthHeight;
  if (s == "dw") return Plane::DepthWidth;
  throw InvalidArgument("unknown perturbation plane '" + std::string(s) + "'");
}

/// Name form: "<kind>" or "<kind>@<plane>" for non-default planes.
inline std::string to_string(const Perturbation& p) {
  auto s = to_string(p.kind);
  if (p.plane != Plane::HeightWidth) s += "@" + to_string(p.plane);
  return s;
}

inline Perturbation parse_perturbation(std::string_view s) {
  Perturbation p;
  if (auto at = s.find('@'); at != std::string_view::npos) {
    p.plane = parse_plane(s.substr(at + 1));
    s = s.substr(0, at);
  }
  for (const auto& [kind, name] : kKindNames) {
    if (name == s) {
      p.kind = kind;
      return p;
    }
  }
  throw InvalidArgument("unknown perturbation '" + std::string(s) + "'");
}

inline constexpr bool is_rotation(PerturbationKind k) {
  return k == PerturbationKind::Rot90 || k == PerturbationKind::Rot180 || k == PerturbationKind::Rot270;
}

inline Perturbation inverse(Perturbation p) {
  if (p.kind == PerturbationKind::Rot90)
    p.kind = PerturbationKind::Rot270;
  else if (p.kind == PerturbationKind::Rot270)
    p.kind = PerturbationKind::Rot90;
  return p;
}

namespace detail {

inline std::pair<std::size_t, std::size_t> plane_axes(Plane plane, const AxisRoles& roles,
                                                      std::size_t rank) {
  roles.validate(rank);
  auto need = [](const std::optional<std::size_t>& a, const char* name) {
    if (!a) throw LayoutError(std::string("perturbation needs a ") + name + " axis");
    return *a;
  };
  switch (plane) {
    case Plane::HeightWidth: return {need(roles.height, "height"), need(roles.width, "width")};
    case Plane::DepthHeight: return {need(roles.depth, "depth"), need(roles.height, "height")};
    case Plane::DepthWidth: return {need(roles.depth, "depth"), need(roles.width, "width")};
  }
  throw LayoutError("bad plane");
}

}  // namespace detail

/// Applies `p` to the spatial axes named by `roles`; all other axes are untouched.
inline Tensor apply(const Perturbation& p, const Tensor& t, const AxisRoles& roles) {
  if (p.kind == PerturbationKind::Identity) return t;
  const auto [ra, ca] = detail::plane_axes(p.plane, roles, t.rank());
  const std::size_t nr = t.extent(ra);
  const std::size_t nc = t.extent(ca);
  if (is_rotation(p.kind) && nr != nc)
    throw ShapeError("rotation " + to_string(p) + " needs a square plane, got " + std::to_string(nr) +
                     "x" + std::to_string(nc));

  const auto& shape = t.shape();
  const auto strides = t.strides();
  const std::size_t rank = t.rank();
  std::vector<double> out(t.size());
  std::array<std::size_t, kMaxRank> idx{};
  const auto in = t.values();

  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    const std::size_t r = idx[ra];
    const std::size_t c = idx[ca];
    std::size_t sr = r, sc = c;
    switch (p.kind) {
      case PerturbationKind::FlipH: sc = nc - 1 - c; break;
      case PerturbationKind::FlipV: sr = nr - 1 - r; break;
      case PerturbationKind::FlipHV: sr = nr - 1 - r; sc = nc - 1 - c; break;
      case PerturbationKind::Rot90: sr = nr - 1 - c; sc = r; break;
      case PerturbationKind::Rot180: sr = nr - 1 - r; sc = nc - 1 - c; break;
      case PerturbationKind::Rot270: sr = c; sc = nc - 1 - r; break;
      case PerturbationKind::Identity: break;
    }
    std::size_t src = 0;
    for (std::size_t a = 0; a < rank; ++a) {
      const std::size_t coord = a == ra ? sr : a == ca ? sc : idx[a];
      src += coord * strides[a];
    }
    out[flat] = in[src];
    for (std::size_t a = rank; a-- > 0;) {
      if (++idx[a] < shape[a]) break;
      idx[a] = 0;
    }
  }
  return Tensor(shape, std::move(out), t.dtype());
}

/// Maps a prediction produced from a `p`-perturbed input back to canonical orientation.
inline Tensor realign(const Perturbation& p, const Tensor& prediction, const AxisRoles& roles) {
  return apply(inverse(p), prediction, roles);
}

/// Composition of elementary perturbations, applied first to last.
struct Transform {
  std::vector<Perturbation> steps;

  Transform() = default;
  Transform(Perturbation p) : steps{p} {}  // NOLINT(google-explicit-constructor)
  explicit Transform(std::vector<Perturbation> s) : steps(std::move(s)) {}

  bool is_identity() const {
    return std::all_of(steps.begin(), steps.end(),
                       [](const Perturbation& p) { return p.kind == PerturbationKind::Identity; });
  }

  friend bool operator==(const Transform&, const Transform&) = default;
};

inline std::string to_string(const Transform& t) {
  if (t.steps.empty()) return "identity";
  std::string s;
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    if (i) s += "+";
    s += to_string(t.steps[i]);
  }
  return s;
}

/// Parses "flip_h", "rot90+flip_v", "rot90@dh", ...
inline Transform parse_transform(std::string_view s) {
  Transform t;
  while (true) {
    const auto plus = s.find('+');
    t.steps.push_back(parse_perturbation(s.substr(0, plus)));
    if (plus == std::string_view::npos) break;
    s = s.substr(plus + 1);
  }
  return t;
}

inline Transform inverse(const Transform& t) {
  Transform inv;
  for (auto it = t.steps.rbegin(); it != t.steps.rend(); ++it) inv.steps.push_back(inverse(*it));
  return inv;
}

inline Tensor apply(const Transform& tr, const Tensor& t, const AxisRoles& roles) {
  if (tr.steps.empty()) return t;
  Tensor out = apply(tr.steps.front(), t, roles);
  for (std::size_t i = 1; i < tr.steps.size(); ++i) out = apply(tr.steps[i], out, roles);
  return out;
}

inline Tensor realign(const Transform& tr, const Tensor& prediction, const AxisRoles& roles) {
  return apply(inverse(tr), prediction, roles);
}

/// Ordered perturbation family; member 0 is always the identity.
class PerturbationSet {
 public:
  explicit PerturbationSet(std::vector<Transform> members) : members_(std::move(members)) { validate(); }

  /// Identity plus the three flips.
  static PerturbationSet flips() {
    return PerturbationSet({Perturbation{PerturbationKind::Identity}, Perturbation{PerturbationKind::FlipH},
                            Perturbation{PerturbationKind::FlipV}, Perturbation{PerturbationKind::FlipHV}});
  }

  static PerturbationSet parse(const std::vector<std::string>& names) {
    std::vector<Transform> m;
    m.reserve(names.size());
    for (const auto& n : names) m.push_back(parse_transform(n));
    return PerturbationSet(std::move(m));
  }

  const std::vector<Transform>& members() const noexcept { return members_; }
  std::size_t size() const noexcept { return members_.size(); }
  const Transform& operator[](std::size_t i) const { return members_.at(i); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& m : members_) out.push_back(to_string(m));
    return out;
  }

 private:
  void validate() const {
    if (members_.empty() || !members_.front().is_identity())
      throw InvalidArgument("perturbation set must begin with identity");
    for (std::size_t i = 1; i < members_.size(); ++i) {
      if (members_[i].is_identity()) throw InvalidArgument("identity may appear only once in a perturbation set");
      for (std::size_t j = 0; j < i; ++j)
        if (to_string(members_[i]) == to_string(members_[j]))
          throw InvalidArgument("duplicate perturbation '" + to_string(members_[i]) + "'");
    }
  }

  std::vector<Transform> members_;
};

}  // namespace pcdal

#endif  // PCDAL_PERTURBATION_HPP
