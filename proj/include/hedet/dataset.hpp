#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "hedet/image.hpp"
#include "hedet/losses.hpp"

namespace hedet {

/// One annotated image. file_name is relative to the benchmark root so
/// records can reference other domains' images. Object categories are the
/// benchmark's global ids; to_local_categories maps them to a model's
/// [0, C) index space.
struct ImageRecord {
    int id = 0;
    std::string file_name;
    int width = 0;
    int height = 0;
    std::vector<GtObject> objects;
};

struct DatasetSplit {
    std::vector<ImageRecord> images;
    std::map<int, std::string> categories; // global id -> name
};

/// COCO pixel convention: [x, y, w, h] of the top-left corner.
std::array<double, 4> box_to_coco(const Box& b, int width, int height);
Box box_from_coco(const std::array<double, 4>& xywh, int width, int height);

/// COCO-style annotation file (images / annotations / categories arrays).
/// Writes are byte-deterministic for a given split.
void save_annotations(const std::string& path, const DatasetSplit& split);
DatasetSplit load_annotations(const std::string& path);

Image load_image(const std::string& root, const ImageRecord& rec);

/// Rewrites object categories through a global->local index map; ids absent
/// from the map are an error.
DatasetSplit to_local_categories(const DatasetSplit& split, const std::map<int, int>& global_to_local);

} // namespace hedet
