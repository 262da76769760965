#include "hedet/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace hedet {

namespace {

using nlohmann::json;

struct LabeledDet {
    double score;
    std::size_t order; // global insertion order, the score tie-breaker
    bool tp;
};

// greedy matching + PR accumulation for one (category, threshold)
double average_precision(const std::vector<ImageDetections>& dets,
                         const std::map<int, const ImageRecord*>& images, int category,
                         double threshold, int total_gt) {
    std::vector<LabeledDet> labeled;
    std::size_t order = 0;
    for (const ImageDetections& im : dets) {
        const ImageRecord* rec = images.at(im.image_id);
        std::vector<std::size_t> gt_idx;
        for (std::size_t i = 0; i < rec->objects.size(); ++i)
            if (rec->objects[i].category == category) gt_idx.push_back(i);

        // detections of this category in score-descending order (stable)
        std::vector<std::size_t> det_idx;
        for (std::size_t i = 0; i < im.detections.size(); ++i)
            if (im.detections[i].category == category) det_idx.push_back(i);
        std::stable_sort(det_idx.begin(), det_idx.end(), [&](std::size_t a, std::size_t b) {
            return im.detections[a].score > im.detections[b].score;
        });

        std::vector<char> taken(gt_idx.size(), 0);
        for (std::size_t di : det_idx) {
            const Detection& d = im.detections[di];
            double best = -1.0;
            int best_g = -1;
            for (std::size_t g = 0; g < gt_idx.size(); ++g) {
                if (taken[g]) continue;
                double overlap = iou(d.box, rec->objects[gt_idx[g]].box);
                if (overlap >= threshold && overlap > best) { // ties keep the first GT
                    best = overlap;
                    best_g = static_cast<int>(g);
                }
            }
            if (best_g >= 0) taken[static_cast<std::size_t>(best_g)] = 1;
            labeled.push_back({d.score, order++, best_g >= 0});
        }
    }
    if (total_gt == 0) return std::numeric_limits<double>::quiet_NaN();
    if (labeled.empty()) return 0.0;

    std::stable_sort(labeled.begin(), labeled.end(), [](const LabeledDet& a, const LabeledDet& b) {
        return a.score > b.score; // stability keeps insertion order on ties
    });

    std::vector<double> precision(labeled.size()), recall(labeled.size());
    int tp = 0, fp = 0;
    for (std::size_t i = 0; i < labeled.size(); ++i) {
        (labeled[i].tp ? tp : fp)++;
        precision[i] = static_cast<double>(tp) / static_cast<double>(tp + fp);
        recall[i] = static_cast<double>(tp) / static_cast<double>(total_gt);
    }
    // right-to-left precision envelope, then the 101-point grid
    std::vector<double> envelope = precision;
    for (std::size_t i = envelope.size(); i-- > 1;)
        envelope[i - 1] = std::max(envelope[i - 1], envelope[i]);
    double ap = 0.0;
    for (int g = 0; g <= 100; ++g) {
        double r = g / 100.0;
        auto it = std::lower_bound(recall.begin(), recall.end(), r);
        if (it != recall.end()) ap += envelope[static_cast<std::size_t>(it - recall.begin())];
    }
    return ap / 101.0;
}

} // namespace

std::vector<double> coco_thresholds() {
    std::vector<double> t;
    for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
    return t;
}

EvalResult compute_map(const std::vector<ImageDetections>& detections, const DatasetSplit& gt,
                       const std::vector<double>& thresholds, int max_dets) {
    if (thresholds.empty()) throw std::invalid_argument("compute_map: no thresholds");
    for (double t : thresholds)
        if (!(t > 0.0 && t <= 1.0)) throw std::invalid_argument("compute_map: bad threshold");
    if (max_dets < 1) throw std::invalid_argument("compute_map: max_dets must be >= 1");

    std::map<int, const ImageRecord*> images;
    for (const ImageRecord& rec : gt.images) images[rec.id] = &rec;

    std::vector<ImageDetections> capped = detections;
    for (ImageDetections& im : capped) {
        if (!images.count(im.image_id))
            throw std::invalid_argument("compute_map: detection for unknown image id " +
                                        std::to_string(im.image_id));
        for (const Detection& d : im.detections) {
            if (!gt.categories.count(d.category))
                throw std::invalid_argument("compute_map: detection with unknown category " +
                                            std::to_string(d.category));
            if (!std::isfinite(d.score))
                throw std::invalid_argument("compute_map: non-finite detection score");
        }
        if (static_cast<int>(im.detections.size()) > max_dets) {
            std::vector<std::size_t> idx(im.detections.size());
            for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
            std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
                return im.detections[a].score > im.detections[b].score;
            });
            idx.resize(static_cast<std::size_t>(max_dets));
            std::sort(idx.begin(), idx.end()); // keep original insertion order
            std::vector<Detection> kept;
            for (std::size_t i : idx) kept.push_back(im.detections[i]);
            im.detections = std::move(kept);
        }
    }

    std::map<int, int> gt_counts;
    for (const ImageRecord& rec : gt.images)
        for (const GtObject& obj : rec.objects) {
            if (!gt.categories.count(obj.category))
                throw std::invalid_argument("compute_map: GT with unknown category");
            ++gt_counts[obj.category];
        }

    EvalResult result;
    std::vector<double> threshold_sums(thresholds.size(), 0.0);
    int evaluated = 0;
    for (const auto& [cat, name] : gt.categories) {
        auto it = gt_counts.find(cat);
        if (it == gt_counts.end()) continue; // no GT: excluded from the mean
        ++evaluated;
        double sum = 0.0;
        for (std::size_t ti = 0; ti < thresholds.size(); ++ti) {
            double ap = average_precision(capped, images, cat, thresholds[ti], it->second);
            sum += ap;
            threshold_sums[ti] += ap;
        }
        result.per_category[cat] = 100.0 * sum / static_cast<double>(thresholds.size());
    }
    if (evaluated > 0) {
        double total = 0.0;
        for (const auto& [cat, ap] : result.per_category) total += ap;
        result.map = total / static_cast<double>(evaluated);
        for (std::size_t ti = 0; ti < thresholds.size(); ++ti)
            result.per_threshold.emplace_back(thresholds[ti],
                                              100.0 * threshold_sums[ti] / evaluated);
    } else {
        for (double t : thresholds) result.per_threshold.emplace_back(t, 0.0);
    }
    return result;
}

RobustnessReport robustness(double map_clean, double map_mixed) {
    RobustnessReport r;
    r.map_clean = map_clean;
    r.map_mixed = map_mixed;
    if (map_clean > 0.0) {
        r.reduction_rate = (map_mixed - map_clean) / map_clean * 100.0;
        r.reduction_defined = true;
    } else {
        r.reduction_rate = std::numeric_limits<double>::quiet_NaN();
        r.reduction_defined = false;
        std::cerr << "warning: reduction rate undefined (clean mAP is 0)\n";
    }
    return r;
}

std::vector<TrainExample> load_examples(const std::string& root, const DatasetSplit& split) {
    std::vector<TrainExample> out;
    for (const ImageRecord& rec : split.images) out.push_back({load_image(root, rec), rec.objects});
    return out;
}

std::vector<ImageDetections> run_detector(ParamStore& params, const ModelConfig& cfg,
                                          const std::string& root, const DatasetSplit& split,
                                          int top_k, double score_threshold) {
    std::vector<ImageDetections> out;
    for (const ImageRecord& rec : split.images) {
        Image img = load_image(root, rec);
        out.push_back({rec.id, predict(params, img, cfg, top_k, score_threshold)});
    }
    return out;
}

RobustnessReport robustness_eval(ParamStore& params, const ModelConfig& cfg,
                                 const std::string& root, const DatasetSplit& clean,
                                 const DatasetSplit& mixed, int top_k, double score_threshold) {
    std::size_t mixed_gt = 0;
    for (const ImageRecord& rec : mixed.images) mixed_gt += rec.objects.size();
    if (mixed_gt == 0)
        throw std::invalid_argument("robustness_eval: mixed set carries no target GT");

    EvalResult clean_result =
        compute_map(run_detector(params, cfg, root, clean, top_k, score_threshold), clean);
    EvalResult mixed_result =
        compute_map(run_detector(params, cfg, root, mixed, top_k, score_threshold), mixed);
    return robustness(clean_result.map, mixed_result.map);
}

void save_detections(const std::string& path, const std::vector<ImageDetections>& dets) {
    json root = json::array();
    for (const ImageDetections& im : dets) {
        json list = json::array();
        for (const Detection& d : im.detections)
            list.push_back({{"box", {d.box.cx, d.box.cy, d.box.w, d.box.h}},
                            {"category", d.category},
                            {"score", d.score}});
        root.push_back({{"image_id", im.image_id}, {"detections", list}});
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_detections: cannot open " + path);
    out << root.dump(1) << "\n";
}

std::vector<ImageDetections> load_detections(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_detections: cannot open " + path);
    json root = json::parse(in);
    std::vector<ImageDetections> out;
    for (const auto& im : root) {
        ImageDetections id;
        id.image_id = im.at("image_id").get<int>();
        for (const auto& dj : im.at("detections")) {
            auto b = dj.at("box").get<std::array<double, 4>>();
            Detection d;
            d.box = Box::center_size(b[0], b[1], b[2], b[3]);
            d.category = dj.at("category").get<int>();
            d.score = dj.at("score").get<double>();
            if (!std::isfinite(d.score))
                throw std::runtime_error("load_detections: non-finite score");
            id.detections.push_back(d);
        }
        out.push_back(std::move(id));
    }
    return out;
}

std::string eval_report_json(const EvalResult& result) {
    json per_cat = json::object();
    for (const auto& [cat, ap] : result.per_category) per_cat[std::to_string(cat)] = ap;
    json per_thr = json::array();
    for (const auto& [t, ap] : result.per_threshold) per_thr.push_back({{"iou", t}, {"ap", ap}});
    return json{{"map", result.map}, {"per_category", per_cat}, {"per_threshold", per_thr}}
        .dump(1);
}

std::string eval_report_table(const EvalResult& result, const DatasetSplit& gt) {
    std::ostringstream out;
    char line[128];
    std::snprintf(line, sizeof(line), "%-24s %8s\n", "category", "AP");
    out << line;
    for (const auto& [cat, ap] : result.per_category) {
        auto it = gt.categories.find(cat);
        std::string name = it != gt.categories.end() ? it->second : std::to_string(cat);
        std::snprintf(line, sizeof(line), "%-24s %8.2f\n", name.c_str(), ap);
        out << line;
    }
    std::snprintf(line, sizeof(line), "%-24s %8.2f\n", "mAP", result.map);
    out << line;
    return out.str();
}

} // namespace hedet
