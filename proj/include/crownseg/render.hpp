#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "crownseg/raster.hpp"

namespace crownseg {

using Rgb = std::array<std::uint8_t, 3>;

/// Named palettes: "classes" (16 distinct colours) and "gray" (256-level ramp).
std::vector<Rgb> palette_by_name(const std::string& name);

/// Uncompressed 8-bit paletted BMP. `indices` is row-major, top row first.
std::vector<char> encode_bmp8(std::size_t width, std::size_t height, const std::vector<std::uint8_t>& indices,
                              const std::vector<Rgb>& palette);

/// Class map to BMP bytes: class c uses palette entry c, unlabeled pixels (-1)
/// are black. Throws ParameterError when a class exceeds the palette.
std::vector<char> render_class_map(const LabelMask& classes, const std::vector<Rgb>& palette);

/// Distance map to BMP bytes: value v in [0, 1] maps to level round(255 v)
/// of a ramp whose luminance increases with the level.
std::vector<char> render_distance_map(const DistanceMap& distance, const std::vector<Rgb>& ramp);

/// Legend text: one `index=#rrggbb` line per entry used.
std::string legend_text(const std::vector<Rgb>& palette, std::size_t entries, bool unlabeled_black);

/// Rec. 601 luma of a colour.
double luminance(const Rgb& c);

} // namespace crownseg
