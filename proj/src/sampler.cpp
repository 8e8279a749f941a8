#include "crownseg/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "crownseg/error.hpp"
#include "crownseg/losses.hpp"

namespace crownseg {

void SamplerConfig::validate() const {
    if (tile_size == 0) throw ParameterError("tile_size must be positive");
    if (!(grid_overlap >= 0.0 && grid_overlap < 1.0)) throw ParameterError("grid_overlap must lie in [0, 1)");
    if (!(min_coverage > 0.0 && min_coverage <= 1.0)) throw ParameterError("min_coverage must lie in (0, 1]");
    if (tiles_per_epoch == 0) throw ParameterError("tiles_per_epoch must be positive");
}

std::size_t SamplerConfig::stride() const {
    const auto s = std::llround(static_cast<double>(tile_size) * (1.0 - grid_overlap));
    return static_cast<std::size_t>(std::max<long long>(1, s));
}

void TrainingRasters::validate() const {
    const auto w = image.width, h = image.height;
    if (labels.width != w || labels.height != h || distance.width != w || distance.height != h || itc.width != w ||
        itc.height != h)
        throw DimensionError("training rasters do not share one extent");
    if (classes == 0) throw ParameterError("training rasters need a class count");
    for (auto l : labels.data)
        if (l < kUnlabeled || l >= static_cast<std::int32_t>(classes))
            throw ValidationError("label " + std::to_string(l) + " outside [-1, " + std::to_string(classes) + ")");
}

std::vector<TileOrigin> grid_candidates(std::size_t raster_w, std::size_t raster_h, const SamplerConfig& cfg) {
    cfg.validate();
    const auto T = cfg.tile_size;
    if (raster_w < T || raster_h < T)
        throw DimensionError("raster " + std::to_string(raster_w) + "x" + std::to_string(raster_h) +
                             " is smaller than the tile size " + std::to_string(T));
    const auto s = cfg.stride();
    std::vector<TileOrigin> out;
    for (std::size_t y = 0; y + T <= raster_h; y += s)
        for (std::size_t x = 0; x + T <= raster_w; x += s) out.push_back({x, y});
    return out;
}

double coverage_fraction(std::span<const std::int32_t> labels) {
    if (labels.empty()) return 0.0;
    const auto n = std::count_if(labels.begin(), labels.end(), [](std::int32_t l) { return l != kUnlabeled; });
    return static_cast<double>(n) / static_cast<double>(labels.size());
}

Tile crop_tile(const TrainingRasters& src, TileOrigin o, std::size_t T) {
    const auto W = src.image.width, H = src.image.height, B = src.image.bands;
    if (o.x + T > W || o.y + T > H) throw DimensionError("tile extends beyond the raster");
    Tile t;
    t.size = T;
    t.bands = B;
    t.origin = o;
    t.image.resize(B * T * T);
    t.labels.resize(T * T);
    t.distance.resize(T * T);
    t.itc.resize(T * T);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t y = 0; y < T; ++y) {
            const float* row = src.image.data.data() + (b * H + o.y + y) * W + o.x;
            std::copy(row, row + T, t.image.begin() + static_cast<std::ptrdiff_t>((b * T + y) * T));
        }
    for (std::size_t y = 0; y < T; ++y) {
        const auto off = (o.y + y) * W + o.x;
        const auto dst = static_cast<std::ptrdiff_t>(y * T);
        std::copy_n(src.labels.data.begin() + static_cast<std::ptrdiff_t>(off), T, t.labels.begin() + dst);
        std::copy_n(src.distance.data.begin() + static_cast<std::ptrdiff_t>(off), T, t.distance.begin() + dst);
        std::copy_n(src.itc.data.begin() + static_cast<std::ptrdiff_t>(off), T, t.itc.begin() + dst);
    }
    return t;
}

namespace {

// Source coordinate of output pixel (x, y) under op, for a T x T tile.
std::pair<std::size_t, std::size_t> source_of(AugmentOp op, std::size_t x, std::size_t y, std::size_t T) {
    switch (op) {
    case AugmentOp::identity: return {x, y};
    case AugmentOp::rot90: return {T - 1 - y, x};
    case AugmentOp::rot180: return {T - 1 - x, T - 1 - y};
    case AugmentOp::rot270: return {y, T - 1 - x};
    case AugmentOp::flip_h: return {T - 1 - x, y};
    case AugmentOp::flip_v: return {x, T - 1 - y};
    }
    return {x, y};
}

template <typename V>
void remap_plane(const V* in, V* out, AugmentOp op, std::size_t T) {
    for (std::size_t y = 0; y < T; ++y)
        for (std::size_t x = 0; x < T; ++x) {
            const auto [sx, sy] = source_of(op, x, y, T);
            out[y * T + x] = in[sy * T + sx];
        }
}

} // namespace

Tile augment(const Tile& tile, AugmentOp op) {
    if (op == AugmentOp::identity) return tile;
    const auto T = tile.size;
    Tile out = tile;
    for (std::size_t b = 0; b < tile.bands; ++b)
        remap_plane(tile.image.data() + b * T * T, out.image.data() + b * T * T, op, T);
    remap_plane(tile.labels.data(), out.labels.data(), op, T);
    remap_plane(tile.distance.data(), out.distance.data(), op, T);
    remap_plane(tile.itc.data(), out.itc.data(), op, T);
    return out;
}

Tile augment(const Tile& tile, Rng& rng) {
    const auto k = rng.uniform_int(std::size(kAugmentOps));
    return augment(tile, kAugmentOps[k]);
}

TileSampler::TileSampler(const TrainingRasters& src, const SamplerConfig& cfg) : src_(&src), cfg_(cfg) {
    src.validate();
    const auto W = src.image.width, H = src.image.height, C = src.classes, T = cfg.tile_size;
    const auto candidates = grid_candidates(W, H, cfg);

    // Summed-area tables: slot 0 counts labeled pixels, slot c + 1 class c.
    const auto SW = W + 1;
    std::vector<std::vector<std::uint32_t>> sat(C + 1, std::vector<std::uint32_t>(SW * (H + 1), 0));
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            const auto l = src.labels(x, y);
            for (std::size_t k = 0; k <= C; ++k) {
                const bool hit = k == 0 ? l != kUnlabeled : l == static_cast<std::int32_t>(k - 1);
                auto& s = sat[k];
                s[(y + 1) * SW + x + 1] = s[y * SW + x + 1] + s[(y + 1) * SW + x] - s[y * SW + x] + (hit ? 1u : 0u);
            }
        }
    }
    auto box = [&](std::size_t k, TileOrigin o) {
        const auto& s = sat[k];
        return s[(o.y + T) * SW + o.x + T] - s[o.y * SW + o.x + T] - s[(o.y + T) * SW + o.x] + s[o.y * SW + o.x];
    };

    std::vector<bool> in_labels(C, false);
    for (auto l : src.labels.data)
        if (l >= 0) in_labels[static_cast<std::size_t>(l)] = true;
    for (std::size_t c = 0; c < C; ++c)
        if (in_labels[c]) present_.push_back(static_cast<std::int32_t>(c));
    if (present_.empty()) throw EmptySupportError("training labels contain no labeled pixel");

    // Same comparison as coverage_fraction so the threshold agrees exactly.
    const double area = static_cast<double>(T * T);
    for (const auto& o : candidates) {
        if (static_cast<double>(box(0, o)) / area < cfg.min_coverage) continue;
        passing_.push_back(o);
        std::vector<std::uint32_t> counts(C);
        for (std::size_t c = 0; c < C; ++c) counts[c] = box(c + 1, o);
        class_counts_.push_back(std::move(counts));
    }
    rebuild_pools();
}

void TileSampler::rebuild_pools() {
    if (passing_.empty())
        throw BalanceInfeasibleError("no tile origin reaches the minimum annotation coverage of " +
                                     std::to_string(cfg_.min_coverage));
    pools_.assign(src_->classes, {});
    for (std::size_t i = 0; i < passing_.size(); ++i)
        for (std::size_t c = 0; c < src_->classes; ++c)
            if (class_counts_[i][c] > 0) pools_[c].push_back(i);
    if (cfg_.balance)
        for (auto c : present_)
            if (pools_[static_cast<std::size_t>(c)].empty())
                throw BalanceInfeasibleError("class " + std::to_string(c) +
                                             " has no tile origin that passes the coverage threshold");
}

std::size_t TileSampler::class_pool_size(std::int32_t cls) const {
    return pools_.at(static_cast<std::size_t>(cls)).size();
}

TileOrigin TileSampler::draw_origin(Rng& rng, std::int32_t* anchor) const {
    if (!cfg_.balance) {
        if (anchor) *anchor = -1;
        return passing_[rng.uniform_int(passing_.size())];
    }
    const auto cls = present_[rng.uniform_int(present_.size())];
    if (anchor) *anchor = cls;
    const auto& pool = pools_[static_cast<std::size_t>(cls)];
    return passing_[pool[rng.uniform_int(pool.size())]];
}

Tile TileSampler::draw(Rng& rng) const {
    std::int32_t anchor = -1;
    const auto o = draw_origin(rng, &anchor);
    Tile t = crop_tile(*src_, o, cfg_.tile_size);
    t.anchor_class = anchor;
    return t;
}

std::vector<TileOrigin> TileSampler::hold_out(std::size_t count, Rng& rng) {
    if (count == 0) throw ParameterError("hold-out needs at least one tile");
    if (passing_.size() <= count)
        throw BalanceInfeasibleError("cannot hold out " + std::to_string(count) + " of " +
                                     std::to_string(passing_.size()) + " passing tile origins");
    std::vector<std::size_t> order(passing_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    const auto n = count;

    std::vector<bool> held(passing_.size(), false);
    std::vector<TileOrigin> out;
    for (std::size_t i = 0; i < n; ++i) {
        held[order[i]] = true;
        out.push_back(passing_[order[i]]);
    }
    std::vector<TileOrigin> keep;
    std::vector<std::vector<std::uint32_t>> keep_counts;
    for (std::size_t i = 0; i < passing_.size(); ++i) {
        if (held[i]) continue;
        keep.push_back(passing_[i]);
        keep_counts.push_back(std::move(class_counts_[i]));
    }
    passing_ = std::move(keep);
    class_counts_ = std::move(keep_counts);
    rebuild_pools();
    return out;
}

} // namespace crownseg
