// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "melbench/audio.hpp"

namespace melbench {

enum class PatchLayout { grid, vertical };

template <typename T>
struct PatchSequence {
  std::vector<T> patches;  // [n_patches x patch_dim]
  std::size_t n_patches = 0;
  std::size_t patch_dim = 0;
  PatchLayout layout = PatchLayout::grid;

  std::span<const T> patch(std::size_t i) const {
    return std::span<const T>(patches).subspan(i * patch_dim, patch_dim);
  }
};

std::size_t grid_patch_count(std::size_t rows, std::size_t cols, std::size_t patch_h, std::size_t patch_w);
std::size_t vertical_patch_count(std::size_t cols, std::size_t width, std::size_t stride);

/// Non-overlapping patch_h x patch_w tiles in row-major tile order, each
/// flattened row-major. Remainder rows/columns are dropped.
template <typename T>
PatchSequence<T> grid_patchify(std::span<const T> image, std::size_t rows, std::size_t cols,
                               std::size_t patch_h, std::size_t patch_w);

/// Full-height windows [t, t + width) at t = 0, stride, 2*stride, ...; each is
/// flattened time-major (all rows of column t, then column t + 1, ...).
template <typename T>
PatchSequence<T> vertical_patchify(std::span<const T> image, std::size_t rows, std::size_t cols,
                                   std::size_t width, std::size_t stride);

/// Inverse of grid_patchify onto the cropped extent
/// (floor(rows/patch_h)*patch_h) x (floor(cols/patch_w)*patch_w).
template <typename T>
std::vector<T> grid_unpatchify(const PatchSequence<T>& seq, std::size_t rows, std::size_t cols,
                               std::size_t patch_h, std::size_t patch_w);

PatchSequence<float> grid_patchify(const MelSpectrogram& spec, std::size_t patch_h, std::size_t patch_w);
PatchSequence<float> vertical_patchify(const MelSpectrogram& spec, std::size_t width, std::size_t stride);

}  // namespace melbench
