#pragma once

#include <map>
#include <string>
#include <vector>

#include "hedet/dataset.hpp"
#include "hedet/detector.hpp"

namespace hedet {

/// Detections for one image, in the same category space as the GT split they
/// are evaluated against.
struct ImageDetections {
    int image_id = 0;
    std::vector<Detection> detections;
};

/// All values in percentage points (0..100).
struct EvalResult {
    double map = 0.0;
    std::map<int, double> per_category;                  // AP averaged over thresholds
    std::vector<std::pair<double, double>> per_threshold; // (iou threshold, AP over categories)
};

struct RobustnessReport {
    double map_clean = 0.0;
    double map_mixed = 0.0;
    double reduction_rate = 0.0; // percent; NaN when undefined
    bool reduction_defined = false;
};

/// COCO thresholds 0.50:0.05:0.95.
std::vector<double> coco_thresholds();

/// COCO-style mAP: per category and threshold, greedy score-descending
/// matching against unmatched GT (score ties broken by insertion order),
/// 101-point interpolated AP, averaged over thresholds then over the
/// categories that have GT instances. max_dets keeps the top-scoring
/// detections per image.
EvalResult compute_map(const std::vector<ImageDetections>& detections, const DatasetSplit& gt,
                       const std::vector<double>& thresholds = coco_thresholds(),
                       int max_dets = 100);

/// (mixed - clean)/clean * 100; undefined (NaN + warning) when clean is 0.
RobustnessReport robustness(double map_clean, double map_mixed);

/// Loads every record's pixels; annotations are carried through unchanged.
/// Records must already be in the model's local category space.
std::vector<TrainExample> load_examples(const std::string& root, const DatasetSplit& split);

/// Runs the detector over a split (records must be in the model's local
/// category space) and collects per-image detections.
std::vector<ImageDetections> run_detector(ParamStore& params, const ModelConfig& cfg,
                                          const std::string& root, const DatasetSplit& split,
                                          int top_k, double score_threshold);

/// Clean vs CD-Mixed evaluation of one model. The mixed split must still
/// carry the target domain's GT.
RobustnessReport robustness_eval(ParamStore& params, const ModelConfig& cfg,
                                 const std::string& root, const DatasetSplit& clean,
                                 const DatasetSplit& mixed, int top_k, double score_threshold);

/// Detection-results file: per-image {box, category, score} lists with
/// normalized center-size boxes.
void save_detections(const std::string& path, const std::vector<ImageDetections>& dets);
std::vector<ImageDetections> load_detections(const std::string& path);

/// Structured report plus a human-readable table.
std::string eval_report_json(const EvalResult& result);
std::string eval_report_table(const EvalResult& result, const DatasetSplit& gt);

} // namespace hedet
