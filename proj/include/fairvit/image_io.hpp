#pragma once

#include <string>

#include "fairvit/tensor.hpp"

namespace fairvit {

// 8-bit binary netpbm files. Color images are PPM (P6) with tensor layout
// [3, h, w], grayscale maps are PGM (P5) with layout [h, w]; values in [0,1].
void write_ppm(const std::string& path, const Tensor& image);
void write_pgm(const std::string& path, const Tensor& map);
Tensor read_ppm(const std::string& path);
Tensor read_pgm(const std::string& path);

// Reads either format by magic; grayscale is expanded to [1, h, w].
Tensor read_image(const std::string& path);

// Bilinear interpolation, layout [c, h, w] -> [c, out_h, out_w].
Tensor resize_bilinear(const Tensor& image, size_t out_h, size_t out_w);

}  // namespace fairvit
