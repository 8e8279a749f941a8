#pragma once

#include <cstdint>
#include <vector>

#include "crownseg/raster.hpp"

namespace crownseg {

struct SceneConfig {
    std::size_t width = 512;
    std::size_t height = 512;
    std::size_t bands = 8;
    std::size_t classes = 5;
    std::size_t crowns = 40;
    double radius_min = 18.0; // semi-axis range of the crown ellipses, pixels
    double radius_max = 32.0;
    double crown_gap = 2.0;   // minimum free space between crown bounding circles
    double separation = 0.25; // distance between class signatures
    double crown_jitter = 0.03; // per-crown spectral offset, standard deviation per band
    double noise_sigma = 0.08;
    double falloff = 0.15;    // centre-to-edge brightness swing inside a crown
    double labeled_fraction = 0.6;
    std::uint64_t seed = 1;

    void validate() const;
};

struct Crown {
    std::int32_t id = 0; // 1-based ITC id
    std::int32_t cls = 0;
    double cx = 0.0, cy = 0.0;
    double semi_a = 0.0, semi_b = 0.0;
    double angle = 0.0;
    bool labeled = false;

    /// Normalised elliptical radius of a pixel centre: < 1 inside the crown.
    double rho(double x, double y) const;
};

struct Scene {
    Raster raster;
    LabelMask full_truth;    // class of every crown pixel, -1 on background
    LabelMask sparse_labels; // labeled crowns only
    ItcMask itc;             // all crowns, ids 1..K
    std::vector<std::int32_t> train_itcs;
    std::vector<std::int32_t> test_itcs;
    std::vector<Crown> crowns;
    std::vector<std::vector<double>> signatures; // per class, per band
    std::vector<double> soil;

    /// Labels of the given crowns, -1 elsewhere.
    LabelMask labels_for(const std::vector<std::int32_t>& ids) const;
    /// ITC mask of the given crowns renumbered to 1..n in the order given.
    ItcMask itc_for(const std::vector<std::int32_t>& ids) const;
};

/// Crown pixel value in band b: class signature + crown offset +
/// falloff * (1/2 - rho^2) + N(0, noise_sigma). The crown offset is drawn
/// once per crown and band from N(0, crown_jitter). The falloff term
/// averages to zero over an ellipse. Background pixels use the soil spectrum.
///
/// The crowns to label are picked per class from a shuffle that does not
/// depend on labeled_fraction, so scenes that differ only in that fraction
/// share their raster and have nested labeled sets.
Scene generate_scene(const SceneConfig& cfg);

struct ItcSplit {
    std::vector<std::int32_t> train;
    std::vector<std::int32_t> test;
};

/// Stratified split of the labeled crowns. Each class keeps at least one
/// crown on each side.
ItcSplit split_itcs(const Scene& scene, double train_fraction, std::uint64_t seed);

/// Per-class mean spectrum over labeled pixels; empty for absent classes.
std::vector<std::vector<double>> class_centroids(const Raster& raster, const LabelMask& labels,
                                                 std::size_t classes);

/// Assigns every pixel to the class with the nearest centroid (Euclidean).
LabelMask nearest_centroid(const Raster& raster, const std::vector<std::vector<double>>& centroids);

} // namespace crownseg
