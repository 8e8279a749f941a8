#include "crownseg/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "crownseg/error.hpp"
#include "crownseg/losses.hpp"
#include "crownseg/rng.hpp"

namespace crownseg {

void SceneConfig::validate() const {
    if (width == 0 || height == 0) throw ParameterError("scene extents must be positive");
    if (bands == 0) throw ParameterError("scene needs at least one band");
    if (classes == 0) throw ParameterError("scene needs at least one class");
    if (crowns < classes) throw ParameterError("scene needs at least one crown per class");
    if (!(radius_min > 0.0) || radius_max < radius_min) throw ParameterError("invalid crown radius range");
    if (crown_gap < 0.0) throw ParameterError("crown_gap must be non-negative");
    if (separation < 0.0 || noise_sigma < 0.0 || crown_jitter < 0.0)
        throw ParameterError("separation, crown_jitter and noise_sigma must be non-negative");
    if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0))
        throw ParameterError("labeled_fraction must lie in (0, 1]");
}

double Crown::rho(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (c * dx + s * dy) / semi_a;
    const double v = (-s * dx + c * dy) / semi_b;
    return std::sqrt(u * u + v * v);
}

LabelMask Scene::labels_for(const std::vector<std::int32_t>& ids) const {
    std::vector<std::int32_t> cls_of(crowns.size() + 1, kUnlabeled);
    for (auto id : ids) cls_of.at(static_cast<std::size_t>(id)) = crowns.at(static_cast<std::size_t>(id - 1)).cls;
    LabelMask out(itc.width, itc.height, kUnlabeled);
    for (std::size_t i = 0; i < itc.size(); ++i) out.data[i] = cls_of[static_cast<std::size_t>(itc.data[i])];
    return out;
}

ItcMask Scene::itc_for(const std::vector<std::int32_t>& ids) const {
    std::vector<std::int32_t> remap(crowns.size() + 1, 0);
    for (std::size_t k = 0; k < ids.size(); ++k) remap.at(static_cast<std::size_t>(ids[k])) = static_cast<std::int32_t>(k + 1);
    ItcMask out(itc.width, itc.height, 0);
    for (std::size_t i = 0; i < itc.size(); ++i) out.data[i] = remap[static_cast<std::size_t>(itc.data[i])];
    return out;
}

namespace {

constexpr int kPlacementAttempts = 20000;

std::vector<double> unit_direction(Rng& rng, std::size_t bands) {
    std::vector<double> d(bands);
    double norm = 0.0;
    while (norm < 1e-12) {
        norm = 0.0;
        for (auto& v : d) {
            v = rng.normal();
            norm += v * v;
        }
    }
    norm = std::sqrt(norm);
    for (auto& v : d) v /= norm;
    return d;
}

} // namespace

Scene generate_scene(const SceneConfig& cfg) {
    cfg.validate();
    Rng root(cfg.seed);
    Rng spectra_rng(root.fork_seed());
    Rng layout_rng(root.fork_seed());
    Rng label_rng(root.fork_seed());
    Rng noise_rng(root.fork_seed());
    Rng jitter_rng(root.fork_seed());

    Scene scene;
    const std::size_t W = cfg.width, H = cfg.height, B = cfg.bands;

    // Smooth vegetation-like base curve; soil sits below it with a flatter shape.
    std::vector<double> base(B);
    scene.soil.resize(B);
    for (std::size_t b = 0; b < B; ++b) {
        const double t = B > 1 ? static_cast<double>(b) / static_cast<double>(B - 1) : 0.0;
        base[b] = 0.25 + 0.35 / (1.0 + std::exp(-12.0 * (t - 0.55)));
        scene.soil[b] = 0.15 + 0.1 * t;
    }
    for (std::size_t c = 0; c < cfg.classes; ++c) {
        auto d = unit_direction(spectra_rng, B);
        std::vector<double> sig(B);
        for (std::size_t b = 0; b < B; ++b) sig[b] = base[b] + cfg.separation * d[b];
        scene.signatures.push_back(std::move(sig));
    }

    // Sequential placement with rejection against bounding circles.
    for (std::size_t k = 0; k < cfg.crowns; ++k) {
        bool placed = false;
        for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
            Crown c;
            c.semi_a = layout_rng.uniform(cfg.radius_min, cfg.radius_max);
            c.semi_b = layout_rng.uniform(cfg.radius_min, cfg.radius_max);
            c.angle = layout_rng.uniform(0.0, std::numbers::pi);
            const double r = std::max(c.semi_a, c.semi_b);
            if (2.0 * r + 2.0 > static_cast<double>(std::min(W, H))) continue;
            c.cx = layout_rng.uniform(r + 1.0, static_cast<double>(W) - r - 1.0);
            c.cy = layout_rng.uniform(r + 1.0, static_cast<double>(H) - r - 1.0);
            placed = std::all_of(scene.crowns.begin(), scene.crowns.end(), [&](const Crown& o) {
                const double need = r + std::max(o.semi_a, o.semi_b) + cfg.crown_gap;
                return std::hypot(c.cx - o.cx, c.cy - o.cy) >= need;
            });
            if (placed) {
                c.id = static_cast<std::int32_t>(k + 1);
                c.cls = static_cast<std::int32_t>(k % cfg.classes);
                scene.crowns.push_back(c);
            }
        }
        if (!placed)
            throw GenerationError("could not place crown " + std::to_string(k + 1) + " of " +
                                  std::to_string(cfg.crowns) + " without overlap");
    }

    // Labeled subset: per class, a fixed shuffle of that class's crowns.
    for (std::size_t c = 0; c < cfg.classes; ++c) {
        std::vector<std::size_t> members;
        for (std::size_t k = 0; k < scene.crowns.size(); ++k)
            if (scene.crowns[k].cls == static_cast<std::int32_t>(c)) members.push_back(k);
        label_rng.shuffle(members);
        const auto n = members.size();
        auto take = static_cast<std::size_t>(std::llround(cfg.labeled_fraction * static_cast<double>(n)));
        take = std::clamp<std::size_t>(take, 1, n);
        for (std::size_t i = 0; i < take; ++i) scene.crowns[members[i]].labeled = true;
    }
    for (const auto& c : scene.crowns) (c.labeled ? scene.train_itcs : scene.test_itcs).push_back(c.id);

    // Rasterise crowns.
    scene.itc = ItcMask(W, H, 0);
    scene.full_truth = LabelMask(W, H, kUnlabeled);
    scene.sparse_labels = LabelMask(W, H, kUnlabeled);
    std::vector<double> rho_map(W * H, 0.0);
    for (const auto& c : scene.crowns) {
        const double r = std::max(c.semi_a, c.semi_b);
        const auto x0 = static_cast<std::size_t>(std::max(0.0, std::floor(c.cx - r - 1.0)));
        const auto x1 = static_cast<std::size_t>(std::min(static_cast<double>(W - 1), std::ceil(c.cx + r + 1.0)));
        const auto y0 = static_cast<std::size_t>(std::max(0.0, std::floor(c.cy - r - 1.0)));
        const auto y1 = static_cast<std::size_t>(std::min(static_cast<double>(H - 1), std::ceil(c.cy + r + 1.0)));
        for (std::size_t y = y0; y <= y1; ++y) {
            for (std::size_t x = x0; x <= x1; ++x) {
                const double rho = c.rho(static_cast<double>(x), static_cast<double>(y));
                if (rho >= 1.0) continue;
                scene.itc(x, y) = c.id;
                scene.full_truth(x, y) = c.cls;
                if (c.labeled) scene.sparse_labels(x, y) = c.cls;
                rho_map[y * W + x] = rho;
            }
        }
    }

    std::vector<std::vector<double>> offsets(scene.crowns.size(), std::vector<double>(B));
    for (auto& o : offsets)
        for (auto& v : o) v = cfg.crown_jitter * jitter_rng.normal();

    scene.raster = Raster(W, H, B);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                const auto id = scene.itc(x, y);
                double v;
                if (id == 0) {
                    v = scene.soil[b];
                } else {
                    const auto& crown = scene.crowns[static_cast<std::size_t>(id - 1)];
                    const double rho = rho_map[y * W + x];
                    v = scene.signatures[static_cast<std::size_t>(crown.cls)][b] + offsets[static_cast<std::size_t>(id - 1)][b] +
                        cfg.falloff * (0.5 - rho * rho);
                }
                scene.raster.at(b, x, y) = static_cast<float>(v + cfg.noise_sigma * noise_rng.normal());
            }
        }
    }
    return scene;
}

ItcSplit split_itcs(const Scene& scene, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw ParameterError("train_fraction must lie in (0, 1)");
    Rng rng(seed);
    std::int32_t classes = 0;
    for (const auto& c : scene.crowns) classes = std::max(classes, c.cls + 1);
    ItcSplit split;
    for (std::int32_t cls = 0; cls < classes; ++cls) {
        std::vector<std::int32_t> ids;
        for (const auto& c : scene.crowns)
            if (c.labeled && c.cls == cls) ids.push_back(c.id);
        if (ids.empty()) continue;
        if (ids.size() < 2)
            throw SplitError("class " + std::to_string(cls) + " has a single labeled crown; cannot split");
        rng.shuffle(ids);
        auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(ids.size())));
        n_train = std::clamp<std::size_t>(n_train, 1, ids.size() - 1);
        split.train.insert(split.train.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
        split.test.insert(split.test.end(), ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

std::vector<std::vector<double>> class_centroids(const Raster& raster, const LabelMask& labels,
                                                 std::size_t classes) {
    if (labels.width != raster.width || labels.height != raster.height)
        throw DimensionError("label mask and raster extents differ");
    std::vector<std::vector<double>> sums(classes, std::vector<double>(raster.bands, 0.0));
    std::vector<std::size_t> counts(classes, 0);
    const std::size_t plane = raster.width * raster.height;
    for (std::size_t i = 0; i < plane; ++i) {
        const auto l = labels.data[i];
        if (l < 0) continue;
        if (static_cast<std::size_t>(l) >= classes) throw ValidationError("label exceeds class count");
        ++counts[static_cast<std::size_t>(l)];
        for (std::size_t b = 0; b < raster.bands; ++b) sums[static_cast<std::size_t>(l)][b] += raster.data[b * plane + i];
    }
    for (std::size_t c = 0; c < classes; ++c) {
        if (counts[c] == 0) {
            sums[c].clear();
            continue;
        }
        for (auto& v : sums[c]) v /= static_cast<double>(counts[c]);
    }
    return sums;
}

LabelMask nearest_centroid(const Raster& raster, const std::vector<std::vector<double>>& centroids) {
    LabelMask out(raster.width, raster.height, kUnlabeled);
    const std::size_t plane = raster.width * raster.height;
    for (std::size_t i = 0; i < plane; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < centroids.size(); ++c) {
            if (centroids[c].empty()) continue;
            double d = 0.0;
            for (std::size_t b = 0; b < raster.bands; ++b) {
                const double e = raster.data[b * plane + i] - centroids[c][b];
                d += e * e;
            }
            if (d < best) {
                best = d;
                out.data[i] = static_cast<std::int32_t>(c);
            }
        }
    }
    return out;
}

} // namespace crownseg
