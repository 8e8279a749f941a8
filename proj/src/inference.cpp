#include "crownseg/inference.hpp"

#include <algorithm>
#include <cmath>

#include "crownseg/error.hpp"
#include "crownseg/rng.hpp"

namespace crownseg {

StitchPlan StitchPlan::make(std::size_t extent, std::size_t tile, double overlap) {
    if (tile == 0 || extent == 0) throw DimensionError("tile size and scene extent must be positive");
    if (!(overlap >= 0.0 && overlap < 1.0)) throw ParameterError("overlap ratio must lie in [0, 1)");
    StitchPlan p;
    p.tile = tile;
    p.overlap = overlap;
    const double t = static_cast<double>(tile);
    p.stride = static_cast<std::size_t>(std::max<long long>(1, std::llround(t * (1.0 - overlap))));
    p.margin = static_cast<std::size_t>(std::floor(t * overlap / 2.0));
    if (p.margin + p.stride > tile) p.margin = tile - p.stride;
    p.tiles = (extent + p.stride - 1) / p.stride;
    p.padded = std::max(extent + 2 * p.margin, (p.tiles - 1) * p.stride + tile);
    return p;
}

namespace {

struct TileJob {
    std::size_t ix, iy;
};

} // namespace

ScenePrediction stitch_predict(const TilePredictor& model, const Raster& raster, std::size_t tile, double overlap,
                               std::optional<std::uint64_t> order_seed) {
    if (tile % 4 != 0) throw DimensionError("tile size " + std::to_string(tile) + " is not divisible by 4");
    if (raster.bands != model.bands())
        throw DimensionError("raster has " + std::to_string(raster.bands) + " bands, model expects " +
                             std::to_string(model.bands()));
    const auto W = raster.width, H = raster.height, B = raster.bands, C = model.classes();
    const auto px = StitchPlan::make(W, tile, overlap);
    const auto py = StitchPlan::make(H, tile, overlap);

    ScenePrediction out;
    out.probs = ProbabilityVolume(W, H, C);
    if (model.has_distance()) out.distance = DistanceMap(W, H, 0.0f);

    std::vector<TileJob> jobs;
    for (std::size_t iy = 0; iy < py.tiles; ++iy)
        for (std::size_t ix = 0; ix < px.tiles; ++ix) jobs.push_back({ix, iy});
    if (order_seed) {
        Rng rng(*order_seed);
        rng.shuffle(jobs);
    }

    const std::size_t plane = W * H;
    Tensor<float> x({1, B, tile, tile});
    for (const auto& job : jobs) {
        // window origin in scene coordinates (may be negative)
        const auto ox = static_cast<std::ptrdiff_t>(job.ix * px.stride) - static_cast<std::ptrdiff_t>(px.margin);
        const auto oy = static_cast<std::ptrdiff_t>(job.iy * py.stride) - static_cast<std::ptrdiff_t>(py.margin);
        auto xv = x.values();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t ty = 0; ty < tile; ++ty) {
                const auto sy = reflect_index(oy + static_cast<std::ptrdiff_t>(ty), H);
                for (std::size_t tx = 0; tx < tile; ++tx) {
                    const auto sx = reflect_index(ox + static_cast<std::ptrdiff_t>(tx), W);
                    xv[(b * tile + ty) * tile + tx] = raster.data[(b * H + sy) * W + sx];
                }
            }
        const auto pack = model.predict(x);
        const auto probs = pack.probs.values();

        const auto x0 = job.ix * px.stride, x1 = std::min(W, x0 + px.stride);
        const auto y0 = job.iy * py.stride, y1 = std::min(H, y0 + py.stride);
        for (std::size_t y = y0; y < y1; ++y) {
            const auto ty = y - y0 + py.margin;
            for (std::size_t xx = x0; xx < x1; ++xx) {
                const auto tx = xx - x0 + px.margin;
                for (std::size_t c = 0; c < C; ++c)
                    out.probs.data[c * plane + y * W + xx] = probs[(c * tile + ty) * tile + tx];
                if (out.distance) (*out.distance)(xx, y) = pack.distance->values()[ty * tile + tx];
            }
        }
    }
    return out;
}

ScenePrediction fused_predict(const TilePredictor& model, const Raster& raster, std::size_t tile,
                              const std::vector<double>& overlaps) {
    if (overlaps.empty()) throw ParameterError("fused prediction needs at least one overlap ratio");
    if (overlaps.size() == 1) return stitch_predict(model, raster, tile, overlaps[0]);

    const auto W = raster.width, H = raster.height, C = model.classes(), plane = W * H;
    std::vector<double> psum(plane * C, 0.0), dsum;
    if (model.has_distance()) dsum.assign(plane, 0.0);
    for (double o : overlaps) {
        const auto one = stitch_predict(model, raster, tile, o);
        for (std::size_t i = 0; i < psum.size(); ++i) psum[i] += one.probs.data[i];
        for (std::size_t i = 0; i < dsum.size(); ++i) dsum[i] += one.distance->data[i];
    }
    ScenePrediction out;
    out.probs = ProbabilityVolume(W, H, C);
    for (std::size_t i = 0; i < plane; ++i) {
        double z = 0.0;
        for (std::size_t c = 0; c < C; ++c) z += psum[c * plane + i];
        for (std::size_t c = 0; c < C; ++c) out.probs.data[c * plane + i] = static_cast<float>(psum[c * plane + i] / z);
    }
    if (model.has_distance()) {
        out.distance = DistanceMap(W, H, 0.0f);
        const double n = static_cast<double>(overlaps.size());
        for (std::size_t i = 0; i < plane; ++i) out.distance->data[i] = static_cast<float>(dsum[i] / n);
    }
    return out;
}

LabelMask argmax_map(const ProbabilityVolume& probs) {
    if (probs.classes == 0) throw DimensionError("probability volume has no classes");
    const auto plane = probs.width * probs.height;
    LabelMask out(probs.width, probs.height, 0);
    for (std::size_t i = 0; i < plane; ++i) {
        std::size_t best = 0;
        float bv = probs.data[i];
        for (std::size_t c = 1; c < probs.classes; ++c) {
            const float v = probs.data[c * plane + i];
            if (v > bv) {
                bv = v;
                best = c;
            }
        }
        out.data[i] = static_cast<std::int32_t>(best);
    }
    return out;
}

} // namespace crownseg
