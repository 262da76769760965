#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hedet/dataset.hpp"
#include "hedet/rng.hpp"

namespace hedet {

/// Six shape kinds shared by every domain; the local category index selects
/// the kind, while rendering style and global category ids differ per domain.
constexpr int kShapesPerDomain = 6;
extern const std::array<const char*, kShapesPerDomain> kShapeNames;

enum class BackgroundKind { plain = 0, noise = 1, checker = 2 };

struct DomainSpec {
    int domain_id = 0;
    std::string name;
    std::vector<int> category_ids; // global ids, disjoint across domains
    std::vector<std::string> category_names;
    int image_size = 96;
    int min_objects = 1;
    int max_objects = 3;
    double min_radius = 0.09; // as a fraction of image size
    double max_radius = 0.19;
    BackgroundKind background = BackgroundKind::plain;
    std::array<double, 3> bg_color = {0.5, 0.5, 0.5};
    std::array<double, 3> bg_color2 = {0.5, 0.5, 0.5}; // checker partner
    bool outlined = false;
    std::vector<std::array<double, 3>> palette; // one color per local category

    void validate() const;
    std::map<int, int> global_to_local() const;
};

/// The five evaluation domains (disjoint global category ids 0..29).
std::vector<DomainSpec> default_domains(int image_size);

/// Reserved pretraining domain (ids 30..35); never part of the mixed rounds.
DomainSpec base_domain(int image_size);

/// One placed shape in pixel coordinates.
struct PlacedObject {
    int local_category = 0;
    double cx = 0.0, cy = 0.0, r = 0.0;
};

struct RenderedImage {
    Image image;
    std::vector<GtObject> objects; // global categories, pixel-tight boxes
    std::vector<PlacedObject> placed;
};

/// Coverage mask of one object (image_size^2 bytes, row-major 0/1).
std::vector<std::uint8_t> object_mask(const DomainSpec& spec, const PlacedObject& obj);

/// Pure in (spec, seed, index). forced_single_category >= 0 renders exactly
/// one object of that local category (K-shot reserve images).
RenderedImage render_image(const DomainSpec& spec, std::uint64_t seed, int index,
                           int forced_single_category = -1);

struct GenerateCounts {
    int n_train = 200;
    int n_val = 100;
    int n_test = 200;
    int singles_per_category = 12; // leading train images, one object each
};

/// Writes root/<name>/images/*.ppm plus train/val/test annotation files.
/// Deterministic bytes for a given (spec, counts, seed).
void generate_domain(const DomainSpec& spec, const std::string& root, const GenerateCounts& counts,
                     std::uint64_t seed);

DatasetSplit load_split(const std::string& root, const std::string& domain_name,
                        const std::string& split);

/// Exactly K object instances per category; selected images keep all their
/// annotations. Errors when a category cannot reach K.
DatasetSplit sample_kshot(const DatasetSplit& train, int k, std::uint64_t seed);

/// Target test set plus every other domain's test images as OOD with empty
/// target-category GT. Image ids are renumbered; file names keep pointing
/// into the source domains.
DatasetSplit build_cd_mixed(const DatasetSplit& target_test,
                            const std::vector<DatasetSplit>& other_tests);

struct BenchmarkManifest {
    int image_size = 96;
    std::uint64_t seed = 0;
    GenerateCounts counts;
    std::vector<DomainSpec> domains; // evaluation domains
    DomainSpec base;                 // pretraining domain
};

/// Generates the base domain plus all evaluation domains and the manifest.
void generate_benchmark(const std::string& root, const BenchmarkManifest& manifest);
BenchmarkManifest load_manifest(const std::string& root);

} // namespace hedet
