#pragma once

// Minimal dense row-major N-d array plus the four array operations the
// covariance recursions are phrased in: cumsum, slicesum, shift and
// hadamard.  The reference notation indexes arrays 1-based; everything
// here is 0-based with identical semantics:
//
//   cumsum(A, ax)   : inclusive prefix sums along `ax`
//   shift(A, ax, m) : entries move m slots towards higher indices along
//                     `ax`, vacated slots filled with zero
//   slicesum(A, ax) : sums along `ax`, removing that axis
//   hadamard(A, B)  : elementwise product of equal-shape arrays
//
// shift-then-cumsum equals cumsum-then-shift, and with m = 1 either
// composition is the exclusive prefix sum; the fused in-place variant
// `exclusive_cumsum_inplace` is what the recursions use on their hot path.
//
// Scalar type is a template parameter: `double` for plain evaluation and
// `ad::Var` when the same recursion must be recorded for differentiation.

#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace seqgp {

template <class S>
struct NdArray {
  std::vector<int> shape;
  std::vector<S> data;

  NdArray() = default;
  explicit NdArray(std::vector<int> shp, S fill = S(0)) : shape(std::move(shp)) {
    std::size_t n = 1;
    for (int s : shape) {
      if (s < 0) throw std::invalid_argument("NdArray: negative extent");
      n *= static_cast<std::size_t>(s);
    }
    data.assign(n, fill);
  }

  int rank() const { return static_cast<int>(shape.size()); }
  std::size_t size() const { return data.size(); }
};

namespace detail {
// Decompose the index space around `axis`: row-major layout means the array
// is `outer` blocks of `n` lanes, each lane strided by `inner`.
template <class S>
void axis_extents(const NdArray<S>& a, int axis, std::size_t& outer, std::size_t& n,
                  std::size_t& inner) {
  if (axis < 0 || axis >= a.rank()) throw std::invalid_argument("axis out of range");
  outer = 1;
  for (int k = 0; k < axis; ++k) outer *= static_cast<std::size_t>(a.shape[k]);
  n = static_cast<std::size_t>(a.shape[axis]);
  inner = 1;
  for (int k = axis + 1; k < a.rank(); ++k) inner *= static_cast<std::size_t>(a.shape[k]);
}
}  // namespace detail

template <class S>
NdArray<S> cumsum(const NdArray<S>& a, int axis) {
  NdArray<S> out = a;
  std::size_t outer, n, inner;
  detail::axis_extents(a, axis, outer, n, inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      S* lane = out.data.data() + o * n * inner + in;
      for (std::size_t i = 1; i < n; ++i) lane[i * inner] = lane[(i - 1) * inner] + lane[i * inner];
    }
  return out;
}

template <class S>
NdArray<S> shift(const NdArray<S>& a, int axis, int m) {
  if (m < 0) throw std::invalid_argument("shift: negative offset");
  NdArray<S> out(a.shape, S(0));
  std::size_t outer, n, inner;
  detail::axis_extents(a, axis, outer, n, inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const S* src = a.data.data() + o * n * inner + in;
      S* dst = out.data.data() + o * n * inner + in;
      for (std::size_t i = static_cast<std::size_t>(m); i < n; ++i)
        dst[i * inner] = src[(i - m) * inner];
    }
  return out;
}

template <class S>
NdArray<S> slicesum(const NdArray<S>& a, int axis) {
  std::size_t outer, n, inner;
  detail::axis_extents(a, axis, outer, n, inner);
  std::vector<int> shp;
  for (int k = 0; k < a.rank(); ++k)
    if (k != axis) shp.push_back(a.shape[k]);
  NdArray<S> out(shp, S(0));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const S* lane = a.data.data() + o * n * inner + in;
      S acc = S(0);
      for (std::size_t i = 0; i < n; ++i) acc = acc + lane[i * inner];
      out.data[o * inner + in] = acc;
    }
  return out;
}

template <class S>
NdArray<S> hadamard(const NdArray<S>& a, const NdArray<S>& b) {
  if (a.shape != b.shape) throw std::invalid_argument("hadamard: shape mismatch");
  NdArray<S> out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = out.data[i] * b.data[i];
  return out;
}

// Fused shift(+1) followed by cumsum, in place: lane[i] <- sum_{j<i} lane[j].
template <class S>
void exclusive_cumsum_inplace(NdArray<S>& a, int axis) {
  std::size_t outer, n, inner;
  detail::axis_extents(a, axis, outer, n, inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      S* lane = a.data.data() + o * n * inner + in;
      S run = S(0);
      for (std::size_t i = 0; i < n; ++i) {
        S cur = lane[i * inner];
        lane[i * inner] = run;
        run = run + cur;
      }
    }
}

template <class S>
void hadamard_inplace(NdArray<S>& a, const NdArray<S>& b) {
  if (a.shape != b.shape) throw std::invalid_argument("hadamard: shape mismatch");
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] = a.data[i] * b.data[i];
}

}  // namespace seqgp
