// SPDX-License-Identifier: Apache-2.0
#include "melbench/patches.hpp"

#include <stdexcept>
#include <string>

namespace melbench {

std::size_t grid_patch_count(std::size_t rows, std::size_t cols, std::size_t patch_h, std::size_t patch_w) {
  if (patch_h == 0 || patch_w == 0 || patch_h > rows || patch_w > cols) {
    throw std::invalid_argument("patch " + std::to_string(patch_h) + "x" + std::to_string(patch_w) +
                                " does not fit a " + std::to_string(rows) + "x" + std::to_string(cols) +
                                " spectrogram");
  }
  return (rows / patch_h) * (cols / patch_w);
}

std::size_t vertical_patch_count(std::size_t cols, std::size_t width, std::size_t stride) {
  if (width == 0 || width > cols) {
    throw std::invalid_argument("vertical patch width " + std::to_string(width) + " exceeds " +
                                std::to_string(cols) + " frames");
  }
  if (stride == 0) throw std::invalid_argument("vertical patch stride must be >= 1");
  return (cols - width) / stride + 1;
}

template <typename T>
PatchSequence<T> grid_patchify(std::span<const T> image, std::size_t rows, std::size_t cols,
                               std::size_t patch_h, std::size_t patch_w) {
  if (image.size() != rows * cols) throw std::invalid_argument("grid_patchify: image size mismatch");
  PatchSequence<T> seq;
  seq.layout = PatchLayout::grid;
  seq.n_patches = grid_patch_count(rows, cols, patch_h, patch_w);
  seq.patch_dim = patch_h * patch_w;
  seq.patches.resize(seq.n_patches * seq.patch_dim);
  const std::size_t tiles_x = cols / patch_w;
  for (std::size_t p = 0; p < seq.n_patches; ++p) {
    const std::size_t r0 = (p / tiles_x) * patch_h;
    const std::size_t c0 = (p % tiles_x) * patch_w;
    T* dst = seq.patches.data() + p * seq.patch_dim;
    for (std::size_t i = 0; i < patch_h; ++i) {
      for (std::size_t j = 0; j < patch_w; ++j) dst[i * patch_w + j] = image[(r0 + i) * cols + c0 + j];
    }
  }
  return seq;
}

template <typename T>
PatchSequence<T> vertical_patchify(std::span<const T> image, std::size_t rows, std::size_t cols,
                                   std::size_t width, std::size_t stride) {
  if (image.size() != rows * cols) throw std::invalid_argument("vertical_patchify: image size mismatch");
  PatchSequence<T> seq;
  seq.layout = PatchLayout::vertical;
  seq.n_patches = vertical_patch_count(cols, width, stride);
  seq.patch_dim = rows * width;
  seq.patches.resize(seq.n_patches * seq.patch_dim);
  for (std::size_t p = 0; p < seq.n_patches; ++p) {
    const std::size_t t0 = p * stride;
    T* dst = seq.patches.data() + p * seq.patch_dim;
    for (std::size_t j = 0; j < width; ++j) {
      for (std::size_t r = 0; r < rows; ++r) dst[j * rows + r] = image[r * cols + t0 + j];
    }
  }
  return seq;
}

template <typename T>
std::vector<T> grid_unpatchify(const PatchSequence<T>& seq, std::size_t rows, std::size_t cols,
                               std::size_t patch_h, std::size_t patch_w) {
  const std::size_t tiles_y = rows / patch_h;
  const std::size_t tiles_x = cols / patch_w;
  if (seq.layout != PatchLayout::grid || seq.n_patches != tiles_y * tiles_x ||
      seq.patch_dim != patch_h * patch_w) {
    throw std::invalid_argument("grid_unpatchify: sequence does not match geometry");
  }
  const std::size_t out_cols = tiles_x * patch_w;
  std::vector<T> image(tiles_y * patch_h * out_cols);
  for (std::size_t p = 0; p < seq.n_patches; ++p) {
    const std::size_t r0 = (p / tiles_x) * patch_h;
    const std::size_t c0 = (p % tiles_x) * patch_w;
    const T* src = seq.patches.data() + p * seq.patch_dim;
    for (std::size_t i = 0; i < patch_h; ++i) {
      for (std::size_t j = 0; j < patch_w; ++j) image[(r0 + i) * out_cols + c0 + j] = src[i * patch_w + j];
    }
  }
  return image;
}

PatchSequence<float> grid_patchify(const MelSpectrogram& spec, std::size_t patch_h, std::size_t patch_w) {
  return grid_patchify<float>(spec.values, spec.n_mels, spec.n_frames, patch_h, patch_w);
}

PatchSequence<float> vertical_patchify(const MelSpectrogram& spec, std::size_t width, std::size_t stride) {
  return vertical_patchify<float>(spec.values, spec.n_mels, spec.n_frames, width, stride);
}

#define MELBENCH_INSTANTIATE_PATCHES(T)                                                                      \
  template PatchSequence<T> grid_patchify<T>(std::span<const T>, std::size_t, std::size_t, std::size_t,      \
                                             std::size_t);                                                   \
  template PatchSequence<T> vertical_patchify<T>(std::span<const T>, std::size_t, std::size_t, std::size_t,  \
                                                 std::size_t);                                               \
  template std::vector<T> grid_unpatchify<T>(const PatchSequence<T>&, std::size_t, std::size_t, std::size_t, \
                                             std::size_t);

MELBENCH_INSTANTIATE_PATCHES(float)
MELBENCH_INSTANTIATE_PATCHES(double)

}  // namespace melbench
