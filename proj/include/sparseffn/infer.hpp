#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "sparseffn/formats.hpp"
#include "sparseffn/weights.hpp"

namespace sparseffn {

struct TileSchedule {
  std::size_t grid_m = 0;
  std::size_t grid_n = 0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> order;  // (tile_row, tile_col)
};

// Hilbert-curve visiting order. Grids that are not square powers of two are
// embedded into the enclosing curve and out-of-range cells are skipped.
TileSchedule hilbert_schedule(std::size_t grid_m, std::size_t grid_n);

// Rows per strip in the gate projection. The transient buffer of one strip is
// tile_rows × T scalars.
constexpr std::size_t kGateTileRows = 64;

// relu(x·W_g) packed into TwELL tile by tile, strips visited in Hilbert order.
// The full M×N product is never held.
template <class T>
TwellMatrix<T> gate_project_twell(const Matrix<T>& x, const Matrix<T>& W_g, const TwellConfig& cfg,
                                  Precision precision = Precision::f32,
                                  KernelStats* stats = nullptr,
                                  std::size_t tile_rows = kGateTileRows);

// y[m,:] = Σ h_v · (x[m,:]·W_u[:,n]) · W_d[n,:] over the stored gate entries.
template <class T>
Matrix<T> fused_up_down(const Matrix<T>& x, const TwellMatrix<T>& h_g, const Matrix<T>& W_u,
                        const Matrix<T>& W_d, Precision precision = Precision::f32,
                        KernelStats* stats = nullptr);

// Same, with W_u already transposed to N×K so each up column is contiguous.
template <class T>
Matrix<T> fused_up_down_t(const Matrix<T>& x, const TwellMatrix<T>& h_g, const Matrix<T>& W_u_t,
                          const Matrix<T>& W_d, Precision precision = Precision::f32,
                          KernelStats* stats = nullptr);

// y[m,:] = Σ v·W_d[n,:]. Output columns are split into `split` independent
// ranges; the result does not depend on split.
template <class T>
Matrix<T> down_project_twell(const TwellMatrix<T>& h, const Matrix<T>& W_d, std::size_t split = 1,
                             Precision precision = Precision::f32, KernelStats* stats = nullptr);

template <class T>
Matrix<T> ffn_forward_infer(const Matrix<T>& x, const FfnWeights<T>& weights,
                            const TwellConfig& cfg, Precision precision = Precision::f32,
                            KernelStats* stats = nullptr);

// Reference dense block: gated (relu(xW_g) ⊙ xW_u)·W_d, or relu(xW_u)·W_d.
template <class T>
Matrix<T> ffn_forward_dense(const Matrix<T>& x, const FfnWeights<T>& weights,
                            Precision precision = Precision::f32, KernelStats* stats = nullptr);

}  // namespace sparseffn
