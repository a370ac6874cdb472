#pragma once

// Geometry of the hypercube Lambda_L = { x in Z^d : max_i |x_i| < L } and its
// nearest-neighbour bonds, including the bonds that leave Lambda_L.
//
// Site order: lexicographic, first coordinate most significant, each
// coordinate in [-L+1, L-1].
// Bond order: dimension-major; inside a direction i, lexicographic over the
// base (tail) site, with x_i in [-L, L-1] and x_j in [-L+1, L-1] for j != i.
// Every bond is oriented along increasing x_i (tail -> head = tail + e_i).

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "rwre/error.hpp"

namespace rwre {

using Point = std::vector<int>;

inline constexpr std::size_t kOutside = static_cast<std::size_t>(-1);

struct Bond {
  int direction = 0;
  Point tail;  // head = tail + e_direction
};

class Lattice {
public:
  Lattice(int d, int L) : d_(d), L_(L) {
    if (d < 1) throw ParameterDomainError("lattice dimension must be >= 1");
    if (L < 1) throw ParameterDomainError("lattice half-size must be >= 1");
    side_ = 2 * L - 1;
    sites_ = 1;
    for (int i = 0; i < d; ++i) sites_ *= static_cast<std::size_t>(side_);
    bonds_per_direction_ = sites_ / static_cast<std::size_t>(side_) * (2 * L);
    build_tables();
  }

  int dimension() const noexcept { return d_; }
  int half_size() const noexcept { return L_; }
  int side() const noexcept { return side_; }
  std::size_t site_count() const noexcept { return sites_; }
  std::size_t bond_count() const noexcept { return bonds_per_direction_ * d_; }
  std::size_t bonds_per_direction() const noexcept { return bonds_per_direction_; }

  bool contains(std::span<const int> x) const noexcept {
    if (static_cast<int>(x.size()) != d_) return false;
    for (int v : x)
      if (v <= -L_ || v >= L_) return false;
    return true;
  }

  /// Index of an interior site, or kOutside.
  std::size_t site_index(std::span<const int> x) const {
    if (static_cast<int>(x.size()) != d_) throw ShapeError("site has wrong dimension");
    std::size_t idx = 0;
    for (int v : x) {
      if (v <= -L_ || v >= L_) return kOutside;
      idx = idx * side_ + static_cast<std::size_t>(v + L_ - 1);
    }
    return idx;
  }

  Point site(std::size_t index) const {
    if (index >= sites_) throw ShapeError("site index out of range");
    Point x(d_);
    for (int i = d_ - 1; i >= 0; --i) {
      x[i] = static_cast<int>(index % side_) - (L_ - 1);
      index /= side_;
    }
    return x;
  }

  std::size_t bond_index(int direction, std::span<const int> tail) const {
    if (direction < 0 || direction >= d_) throw ShapeError("bond direction out of range");
    if (static_cast<int>(tail.size()) != d_) throw ShapeError("bond tail has wrong dimension");
    std::size_t idx = 0;
    for (int i = 0; i < d_; ++i) {
      const int lo = (i == direction) ? -L_ : -L_ + 1;
      const int extent = (i == direction) ? 2 * L_ : side_;
      const int off = tail[i] - lo;
      if (off < 0 || off >= extent) return kOutside;
      idx = idx * extent + static_cast<std::size_t>(off);
    }
    return direction * bonds_per_direction_ + idx;
  }

  Bond bond(std::size_t index) const {
    if (index >= bond_count()) throw ShapeError("bond index out of range");
    Bond b;
    b.direction = static_cast<int>(index / bonds_per_direction_);
    std::size_t rest = index % bonds_per_direction_;
    b.tail.assign(d_, 0);
    for (int i = d_ - 1; i >= 0; --i) {
      const int lo = (i == b.direction) ? -L_ : -L_ + 1;
      const int extent = (i == b.direction) ? 2 * L_ : side_;
      b.tail[i] = static_cast<int>(rest % extent) + lo;
      rest /= extent;
    }
    return b;
  }

  /// Interior site at the tail (lower end) of a bond, or kOutside.
  std::size_t tail_site(std::size_t bond) const { return tail_[bond]; }
  /// Interior site at the head (upper end) of a bond, or kOutside.
  std::size_t head_site(std::size_t bond) const { return head_[bond]; }

  /// Bond leaving `site` in `direction` towards +e (positive=true) or -e.
  std::size_t site_bond(std::size_t site, int direction, bool positive) const {
    return site_bonds_[site * 2 * d_ + 2 * direction + (positive ? 1 : 0)];
  }

private:
  void build_tables() {
    const std::size_t nb = bond_count();
    tail_.resize(nb);
    head_.resize(nb);
    site_bonds_.assign(sites_ * 2 * d_, kOutside);
    for (std::size_t b = 0; b < nb; ++b) {
      Bond bd = bond(b);
      tail_[b] = site_index(bd.tail);
      bd.tail[bd.direction] += 1;
      head_[b] = site_index(bd.tail);
      if (tail_[b] != kOutside) site_bonds_[tail_[b] * 2 * d_ + 2 * bd.direction + 1] = b;
      if (head_[b] != kOutside) site_bonds_[head_[b] * 2 * d_ + 2 * bd.direction] = b;
    }
  }

  int d_;
  int L_;
  int side_;
  std::size_t sites_;
  std::size_t bonds_per_direction_;
  std::vector<std::size_t> tail_;
  std::vector<std::size_t> head_;
  std::vector<std::size_t> site_bonds_;
};

}  // namespace rwre
