#include "hedet/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace hedet {

namespace {
using nlohmann::json;
}

std::array<double, 4> box_to_coco(const Box& b, int width, int height) {
    auto [x1, y1, x2, y2] = b.corner_form();
    return {x1 * width, y1 * height, (x2 - x1) * width, (y2 - y1) * height};
}

Box box_from_coco(const std::array<double, 4>& xywh, int width, int height) {
    double cx = (xywh[0] + xywh[2] / 2.0) / width;
    double cy = (xywh[1] + xywh[3] / 2.0) / height;
    return Box::center_size(cx, cy, xywh[2] / width, xywh[3] / height);
}

void save_annotations(const std::string& path, const DatasetSplit& split) {
    json images = json::array();
    json annotations = json::array();
    int ann_id = 0;
    for (const ImageRecord& rec : split.images) {
        images.push_back({{"id", rec.id},
                          {"file_name", rec.file_name},
                          {"width", rec.width},
                          {"height", rec.height}});
        for (const GtObject& obj : rec.objects) {
            auto bbox = box_to_coco(obj.box, rec.width, rec.height);
            annotations.push_back({{"id", ann_id++},
                                   {"image_id", rec.id},
                                   {"category_id", obj.category},
                                   {"bbox", bbox},
                                   {"area", bbox[2] * bbox[3]},
                                   {"iscrowd", 0}});
        }
    }
    json categories = json::array();
    for (const auto& [id, name] : split.categories)
        categories.push_back({{"id", id}, {"name", name}});
    json root{{"images", images}, {"annotations", annotations}, {"categories", categories}};

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_annotations: cannot open " + path);
    out << root.dump(1) << "\n";
    if (!out) throw std::runtime_error("save_annotations: short write to " + path);
}

DatasetSplit load_annotations(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_annotations: cannot open " + path);
    json root = json::parse(in);

    DatasetSplit split;
    for (const auto& c : root.at("categories"))
        split.categories[c.at("id").get<int>()] = c.at("name").get<std::string>();

    std::map<int, std::size_t> by_id;
    for (const auto& im : root.at("images")) {
        ImageRecord rec;
        rec.id = im.at("id").get<int>();
        rec.file_name = im.at("file_name").get<std::string>();
        rec.width = im.at("width").get<int>();
        rec.height = im.at("height").get<int>();
        if (by_id.count(rec.id))
            throw std::runtime_error("load_annotations: duplicate image id in " + path);
        by_id[rec.id] = split.images.size();
        split.images.push_back(std::move(rec));
    }
    for (const auto& a : root.at("annotations")) {
        int image_id = a.at("image_id").get<int>();
        auto it = by_id.find(image_id);
        if (it == by_id.end())
            throw std::runtime_error("load_annotations: annotation for unknown image id");
        ImageRecord& rec = split.images[it->second];
        GtObject obj;
        obj.category = a.at("category_id").get<int>();
        if (!split.categories.count(obj.category))
            throw std::runtime_error("load_annotations: annotation with unknown category id");
        auto bbox = a.at("bbox").get<std::array<double, 4>>();
        obj.box = box_from_coco(bbox, rec.width, rec.height);
        rec.objects.push_back(obj);
    }
    std::sort(split.images.begin(), split.images.end(),
              [](const ImageRecord& a, const ImageRecord& b) { return a.id < b.id; });
    return split;
}

Image load_image(const std::string& root, const ImageRecord& rec) {
    Image img = read_ppm(root + "/" + rec.file_name);
    if (img.width != rec.width || img.height != rec.height)
        throw std::runtime_error("load_image: size mismatch for " + rec.file_name);
    return img;
}

DatasetSplit to_local_categories(const DatasetSplit& split, const std::map<int, int>& global_to_local) {
    DatasetSplit out;
    for (const auto& [global, name] : split.categories) {
        auto it = global_to_local.find(global);
        if (it == global_to_local.end())
            throw std::invalid_argument("to_local_categories: unmapped category id");
        out.categories[it->second] = name;
    }
    out.images = split.images;
    for (ImageRecord& rec : out.images)
        for (GtObject& obj : rec.objects) obj.category = global_to_local.at(obj.category);
    return out;
}

} // namespace hedet
