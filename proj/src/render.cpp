#include "crownseg/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "crownseg/binary_io.hpp"
#include "crownseg/error.hpp"

namespace crownseg {

std::vector<Rgb> palette_by_name(const std::string& name) {
    if (name == "classes")
        return {{{230, 25, 75}},   {{60, 180, 75}},   {{255, 225, 25}}, {{0, 130, 200}},
                {{245, 130, 48}},  {{145, 30, 180}},  {{70, 240, 240}}, {{240, 50, 230}},
                {{210, 245, 60}},  {{250, 190, 212}}, {{0, 128, 128}},  {{220, 190, 255}},
                {{170, 110, 40}},  {{255, 250, 200}}, {{128, 0, 0}},    {{170, 255, 195}}};
    if (name == "gray") {
        std::vector<Rgb> ramp(256);
        for (std::size_t i = 0; i < 256; ++i) {
            const auto v = static_cast<std::uint8_t>(i);
            ramp[i] = {v, v, v};
        }
        return ramp;
    }
    throw ParameterError("unknown palette '" + name + "' (expected classes or gray)");
}

std::vector<char> encode_bmp8(std::size_t width, std::size_t height, const std::vector<std::uint8_t>& indices,
                              const std::vector<Rgb>& palette) {
    if (width == 0 || height == 0) throw DimensionError("image extents must be positive");
    if (indices.size() != width * height) throw DimensionError("index count does not match the image extents");
    if (palette.empty() || palette.size() > 256) throw ParameterError("palette must have 1 to 256 entries");
    const std::size_t row = (width + 3) / 4 * 4;
    const std::size_t header = 14 + 40 + 4 * palette.size();
    const std::size_t size = header + row * height;

    ByteWriter out;
    out.bytes("BM");
    out.u32(static_cast<std::uint32_t>(size));
    out.u32(0);
    out.u32(static_cast<std::uint32_t>(header));
    out.u32(40);
    out.i32(static_cast<std::int32_t>(width));
    out.i32(static_cast<std::int32_t>(height)); // positive: bottom-up rows
    out.u16(1);
    out.u16(8);
    out.u32(0); // BI_RGB
    out.u32(static_cast<std::uint32_t>(row * height));
    out.u32(2835); // 72 dpi
    out.u32(2835);
    out.u32(static_cast<std::uint32_t>(palette.size()));
    out.u32(0);
    for (const auto& c : palette) {
        out.u8(c[2]);
        out.u8(c[1]);
        out.u8(c[0]);
        out.u8(0);
    }
    for (std::size_t y = height; y-- > 0;) {
        for (std::size_t x = 0; x < width; ++x) out.u8(indices[y * width + x]);
        for (std::size_t p = width; p < row; ++p) out.u8(0);
    }
    return out.buffer();
}

std::vector<char> render_class_map(const LabelMask& classes, const std::vector<Rgb>& palette) {
    std::int32_t max_class = -1;
    for (auto c : classes.data) max_class = std::max(max_class, c);
    if (max_class >= 0 && static_cast<std::size_t>(max_class) + 1 > palette.size())
        throw ParameterError("class " + std::to_string(max_class) + " exceeds the palette size " +
                             std::to_string(palette.size()));
    const bool has_unlabeled = std::any_of(classes.data.begin(), classes.data.end(), [](auto c) { return c < 0; });
    // palette slot after the classes is black for unlabeled pixels
    std::vector<Rgb> pal(palette.begin(), palette.begin() + std::max<std::int32_t>(max_class + 1, 1));
    const auto black = static_cast<std::uint8_t>(pal.size());
    if (has_unlabeled) {
        if (pal.size() >= 256) throw ParameterError("no palette slot left for unlabeled pixels");
        pal.push_back({0, 0, 0});
    }
    std::vector<std::uint8_t> idx(classes.size());
    for (std::size_t i = 0; i < idx.size(); ++i)
        idx[i] = classes.data[i] < 0 ? black : static_cast<std::uint8_t>(classes.data[i]);
    return encode_bmp8(classes.width, classes.height, idx, pal);
}

std::vector<char> render_distance_map(const DistanceMap& distance, const std::vector<Rgb>& ramp) {
    if (ramp.size() != 256) throw ParameterError("distance rendering needs a 256-entry ramp");
    for (std::size_t i = 1; i < ramp.size(); ++i)
        if (luminance(ramp[i]) < luminance(ramp[i - 1]))
            throw ParameterError("distance ramp luminance must not decrease");
    std::vector<std::uint8_t> idx(distance.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const float v = std::isfinite(distance.data[i]) ? std::clamp(distance.data[i], 0.0f, 1.0f) : 0.0f;
        idx[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    return encode_bmp8(distance.width, distance.height, idx, ramp);
}

std::string legend_text(const std::vector<Rgb>& palette, std::size_t entries, bool unlabeled_black) {
    std::string s;
    char hex[8];
    for (std::size_t i = 0; i < std::min(entries, palette.size()); ++i) {
        std::snprintf(hex, sizeof hex, "#%02x%02x%02x", palette[i][0], palette[i][1], palette[i][2]);
        s += std::to_string(i) + "=" + hex + "\n";
    }
    if (unlabeled_black) s += "unlabeled=#000000\n";
    return s;
}

double luminance(const Rgb& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

} // namespace crownseg
