#include "crownseg/distance_targets.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "crownseg/error.hpp"

namespace crownseg {

namespace {

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

} // namespace

RealMap edt(const BinaryMask& binary) {
    const std::size_t w = binary.width, h = binary.height;
    RealMap out(w, h, 0.0);
    if (w == 0 || h == 0) return out;

    // one ring of background around the image
    const std::size_t pw = w + 2, ph = h + 2;
    auto fg = [&](std::size_t px, std::size_t py) {
        if (px == 0 || py == 0 || px == pw - 1 || py == ph - 1) return false;
        return binary(px - 1, py - 1) != 0;
    };

    // column pass: distance to the nearest background pixel within the column
    std::vector<std::int64_t> g(pw * ph);
    const auto inf = static_cast<std::int64_t>(pw + ph);
    for (std::size_t x = 0; x < pw; ++x) {
        g[x] = fg(x, 0) ? inf : 0;
        for (std::size_t y = 1; y < ph; ++y) g[y * pw + x] = fg(x, y) ? g[(y - 1) * pw + x] + 1 : 0;
        for (std::size_t y = ph - 1; y-- > 0;)
            if (g[(y + 1) * pw + x] + 1 < g[y * pw + x]) g[y * pw + x] = g[(y + 1) * pw + x] + 1;
    }

    // row pass: lower envelope of parabolas (x - i)^2 + g(i)^2
    std::vector<std::int64_t> s(pw), t(pw), row_g(pw);
    for (std::size_t y = 1; y + 1 < ph; ++y) {
        for (std::size_t x = 0; x < pw; ++x) row_g[x] = g[y * pw + x];
        auto f = [&](std::int64_t x, std::int64_t i) { return (x - i) * (x - i) + row_g[i] * row_g[i]; };
        auto sep = [&](std::int64_t i, std::int64_t u) {
            return floor_div(u * u - i * i + row_g[u] * row_g[u] - row_g[i] * row_g[i], 2 * (u - i));
        };
        const auto m = static_cast<std::int64_t>(pw);
        std::int64_t q = 0;
        s[0] = 0;
        t[0] = 0;
        for (std::int64_t u = 1; u < m; ++u) {
            while (q >= 0 && f(t[q], s[q]) > f(t[q], u)) --q;
            if (q < 0) {
                q = 0;
                s[0] = u;
            } else {
                const std::int64_t wv = 1 + sep(s[q], u);
                if (wv < m) {
                    ++q;
                    s[q] = u;
                    t[q] = wv;
                }
            }
        }
        for (std::int64_t u = m - 1; u >= 0; --u) {
            const std::int64_t d2 = f(u, s[q]);
            if (u >= 1 && u <= static_cast<std::int64_t>(w))
                out(static_cast<std::size_t>(u - 1), y - 1) = std::sqrt(static_cast<double>(d2));
            if (u == t[q]) --q;
        }
    }
    return out;
}

RealMap gaussian_smooth(const RealMap& map, double sigma, int radius) {
    if (!(sigma >= 0.0)) throw ParameterError("gaussian_smooth sigma must be non-negative");
    if (radius < 0) throw ParameterError("gaussian_smooth radius must be non-negative");
    if (sigma == 0.0 || radius == 0 || map.size() == 0) return map;

    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (int j = -radius; j <= radius; ++j) {
        const double v = std::exp(-static_cast<double>(j * j) / (2.0 * sigma * sigma));
        kernel[static_cast<std::size_t>(j + radius)] = v;
        total += v;
    }
    for (auto& v : kernel) v /= total;

    const std::size_t w = map.width, h = map.height;
    RealMap tmp(w, h), out(w, h);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int j = -radius; j <= radius; ++j)
                acc += kernel[static_cast<std::size_t>(j + radius)] *
                       map(reflect_index(static_cast<std::ptrdiff_t>(x) + j, w), y);
            tmp(x, y) = acc;
        }
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int j = -radius; j <= radius; ++j)
                acc += kernel[static_cast<std::size_t>(j + radius)] *
                       tmp(x, reflect_index(static_cast<std::ptrdiff_t>(y) + j, h));
            out(x, y) = acc;
        }
    return out;
}

namespace {

template <typename Map>
DistanceMap normalize_impl(const Map& map, const ItcMask& itc) {
    if (map.width != itc.width || map.height != itc.height)
        throw DimensionError("normalize_per_itc: map and ITC mask extents differ");
    std::int32_t max_id = 0;
    for (auto id : itc.data) {
        if (id < 0) throw ValidationError("ITC mask holds negative id " + std::to_string(id));
        max_id = std::max(max_id, id);
    }
    std::vector<double> peak(static_cast<std::size_t>(max_id) + 1, -1.0);
    std::vector<char> present(peak.size(), 0);
    for (std::size_t i = 0; i < itc.size(); ++i) {
        const auto id = static_cast<std::size_t>(itc.data[i]);
        if (id == 0) continue;
        const double v = map.data[i];
        if (!present[id] || v > peak[id]) peak[id] = v;
        present[id] = 1;
    }
    for (std::size_t id = 1; id < peak.size(); ++id)
        if (present[id] && !(peak[id] > 0.0))
            throw DegenerateInstanceError("crown instance " + std::to_string(id) + " has no positive distance value");

    DistanceMap out(map.width, map.height, 0.0f);
    for (std::size_t i = 0; i < itc.size(); ++i) {
        const auto id = static_cast<std::size_t>(itc.data[i]);
        if (id == 0) continue;
        out.data[i] = static_cast<float>(static_cast<double>(map.data[i]) / peak[id]);
    }
    return out;
}

} // namespace

DistanceMap normalize_per_itc(const RealMap& map, const ItcMask& itc) { return normalize_impl(map, itc); }

DistanceMap normalize_per_itc(const DistanceMap& map, const ItcMask& itc) { return normalize_impl(map, itc); }

DistanceMap make_distance_target(const ItcMask& itc, const DistanceTargetOptions& opts) {
    validate_itc_mask(itc);
    BinaryMask binary(itc.width, itc.height, 0);
    for (std::size_t i = 0; i < itc.size(); ++i) binary.data[i] = itc.data[i] > 0 ? 1 : 0;
    return normalize_per_itc(gaussian_smooth(edt(binary), opts.sigma, opts.radius), itc);
}

void validate_itc_mask(const ItcMask& itc) {
    std::int32_t max_id = 0;
    for (auto id : itc.data) {
        if (id < 0) throw ValidationError("ITC mask holds negative id " + std::to_string(id));
        max_id = std::max(max_id, id);
    }
    std::vector<char> present(static_cast<std::size_t>(max_id) + 1, 0);
    for (auto id : itc.data) present[static_cast<std::size_t>(id)] = 1;
    for (std::int32_t id = 1; id <= max_id; ++id)
        if (!present[static_cast<std::size_t>(id)])
            throw ValidationError("ITC ids are not contiguous: id " + std::to_string(id) + " missing below " +
                                  std::to_string(max_id));
}

ItcMask compact_itc_ids(const ItcMask& itc) {
    std::int32_t max_id = 0;
    for (auto id : itc.data) max_id = std::max(max_id, id);
    std::vector<std::int32_t> remap(static_cast<std::size_t>(max_id) + 1, 0);
    for (auto id : itc.data)
        if (id > 0) remap[static_cast<std::size_t>(id)] = 1;
    std::int32_t next = 0;
    for (std::size_t id = 1; id < remap.size(); ++id)
        if (remap[id]) remap[id] = ++next;
    ItcMask out(itc.width, itc.height, 0);
    for (std::size_t i = 0; i < itc.size(); ++i)
        if (itc.data[i] > 0) out.data[i] = remap[static_cast<std::size_t>(itc.data[i])];
    return out;
}

} // namespace crownseg
