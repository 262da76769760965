#include "hedet/synthbench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace hedet {

const std::array<const char*, kShapesPerDomain> kShapeNames = {"circle", "square",  "triangle",
                                                               "diamond", "ring", "cross"};

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

bool inside_shape(int kind, double dx, double dy, double r) {
    switch (kind) {
        case 0: return dx * dx + dy * dy <= r * r;
        case 1: return std::abs(dx) <= r && std::abs(dy) <= r;
        case 2: // apex-up triangle: apex (0,-r), base corners (+-r, r)
            return dy <= r && dy >= -r && std::abs(dx) <= (dy + r) / 2.0;
        case 3: return std::abs(dx) + std::abs(dy) <= r;
        case 4: {
            double d2 = dx * dx + dy * dy;
            double inner = 0.55 * r;
            return d2 <= r * r && d2 >= inner * inner;
        }
        case 5: {
            double arm = 0.33 * r;
            return (std::abs(dx) <= arm && std::abs(dy) <= r) ||
                   (std::abs(dy) <= arm && std::abs(dx) <= r);
        }
        default: throw std::invalid_argument("unknown shape kind");
    }
}

bool covered(const DomainSpec& spec, const PlacedObject& obj, double px, double py) {
    double dx = px - obj.cx, dy = py - obj.cy;
    if (!inside_shape(obj.local_category, dx, dy, obj.r)) return false;
    if (spec.outlined && inside_shape(obj.local_category, dx, dy, 0.72 * obj.r)) return false;
    return true;
}

void paint_background(Image& img, const DomainSpec& spec, RandomStream& bg_rng) {
    const int cell = std::max(4, spec.image_size / 8);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            std::array<double, 3> c = spec.bg_color;
            if (spec.background == BackgroundKind::noise) {
                double g = bg_rng.uniform(0.3, 0.7);
                c = {g, g, g};
            } else if (spec.background == BackgroundKind::checker &&
                       ((x / cell) + (y / cell)) % 2 == 1) {
                c = spec.bg_color2;
            }
            for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = c[ch];
        }
}

struct PixelRect {
    int x1, y1, x2, y2; // inclusive
    bool intersects(const PixelRect& o) const {
        return x1 <= o.x2 && o.x1 <= x2 && y1 <= o.y2 && o.y1 <= y2;
    }
};

std::vector<std::array<double, 3>> vivid_palette() {
    return {{0.85, 0.10, 0.10}, {0.10, 0.75, 0.15}, {0.15, 0.20, 0.90},
            {0.95, 0.80, 0.10}, {0.80, 0.15, 0.80}, {0.10, 0.80, 0.80}};
}

json spec_to_json(const DomainSpec& d) {
    return json{{"domain_id", d.domain_id},
                {"name", d.name},
                {"category_ids", d.category_ids},
                {"category_names", d.category_names},
                {"image_size", d.image_size},
                {"min_objects", d.min_objects},
                {"max_objects", d.max_objects},
                {"min_radius", d.min_radius},
                {"max_radius", d.max_radius},
                {"background", static_cast<int>(d.background)},
                {"bg_color", d.bg_color},
                {"bg_color2", d.bg_color2},
                {"outlined", d.outlined},
                {"palette", d.palette}};
}

DomainSpec spec_from_json(const json& j) {
    DomainSpec d;
    d.domain_id = j.at("domain_id").get<int>();
    d.name = j.at("name").get<std::string>();
    d.category_ids = j.at("category_ids").get<std::vector<int>>();
    d.category_names = j.at("category_names").get<std::vector<std::string>>();
    d.image_size = j.at("image_size").get<int>();
    d.min_objects = j.at("min_objects").get<int>();
    d.max_objects = j.at("max_objects").get<int>();
    d.min_radius = j.at("min_radius").get<double>();
    d.max_radius = j.at("max_radius").get<double>();
    d.background = static_cast<BackgroundKind>(j.at("background").get<int>());
    d.bg_color = j.at("bg_color").get<std::array<double, 3>>();
    d.bg_color2 = j.at("bg_color2").get<std::array<double, 3>>();
    d.outlined = j.at("outlined").get<bool>();
    d.palette = j.at("palette").get<std::vector<std::array<double, 3>>>();
    d.validate();
    return d;
}

DomainSpec make_domain(int id, const std::string& name,
                       std::vector<std::array<double, 3>> palette, int image_size) {
    DomainSpec d;
    d.domain_id = id;
    d.name = name;
    d.image_size = image_size;
    d.palette = std::move(palette);
    for (int i = 0; i < kShapesPerDomain; ++i) {
        d.category_ids.push_back(id * kShapesPerDomain + i);
        d.category_names.push_back(name + "_" + kShapeNames[static_cast<std::size_t>(i)]);
    }
    return d;
}

void check_disjoint(const std::vector<const DomainSpec*>& specs) {
    std::map<int, std::string> seen;
    for (const DomainSpec* d : specs)
        for (int id : d->category_ids) {
            auto [it, fresh] = seen.emplace(id, d->name);
            if (!fresh)
                throw std::invalid_argument("category id " + std::to_string(id) +
                                            " overlaps between domains " + it->second + " and " +
                                            d->name);
        }
}

std::string pad4(int idx) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d", idx);
    return buf;
}

} // namespace

void DomainSpec::validate() const {
    if (image_size < 16) throw std::invalid_argument("domain image_size too small");
    if (category_ids.size() != kShapesPerDomain || category_names.size() != kShapesPerDomain ||
        palette.size() != kShapesPerDomain)
        throw std::invalid_argument("domain must define exactly " +
                                    std::to_string(kShapesPerDomain) + " categories");
    if (min_objects < 1 || max_objects < min_objects)
        throw std::invalid_argument("bad objects-per-image range");
    if (min_radius <= 0.0 || max_radius < min_radius || max_radius > 0.45)
        throw std::invalid_argument("bad radius range");
    if (min_radius * image_size < 1.5)
        throw std::invalid_argument("min_radius too small for the image size");
    if (outlined && min_radius * image_size < 3.0)
        throw std::invalid_argument("outlined shapes need min_radius*image_size >= 3");
    if (2.0 * max_radius * image_size + 6.0 >= image_size)
        throw std::invalid_argument("max_radius leaves no room for placement");
}

std::map<int, int> DomainSpec::global_to_local() const {
    std::map<int, int> m;
    for (int i = 0; i < kShapesPerDomain; ++i) m[category_ids[static_cast<std::size_t>(i)]] = i;
    return m;
}

std::vector<DomainSpec> default_domains(int image_size) {
    std::vector<DomainSpec> out;

    DomainSpec noisy = make_domain(0, "noisy", vivid_palette(), image_size);
    noisy.background = BackgroundKind::noise;
    out.push_back(noisy);

    DomainSpec outline = make_domain(1, "outline",
                                     {{{0.25, 0.05, 0.05},
                                       {0.05, 0.25, 0.05},
                                       {0.05, 0.05, 0.30},
                                       {0.30, 0.25, 0.05},
                                       {0.25, 0.05, 0.25},
                                       {0.05, 0.25, 0.25}}},
                                     image_size);
    outline.bg_color = {0.96, 0.96, 0.94};
    outline.outlined = true;
    out.push_back(outline);

    DomainSpec night = make_domain(2, "night",
                                   {{{0.95, 0.55, 0.55},
                                     {0.60, 0.95, 0.60},
                                     {0.60, 0.65, 1.00},
                                     {0.95, 0.90, 0.50},
                                     {0.90, 0.60, 0.95},
                                     {0.55, 0.95, 0.90}}},
                                   image_size);
    night.bg_color = {0.06, 0.06, 0.08};
    out.push_back(night);

    std::vector<std::array<double, 3>> rotated = vivid_palette();
    std::rotate(rotated.begin(), rotated.begin() + 3, rotated.end());
    DomainSpec checker = make_domain(3, "checker", rotated, image_size);
    checker.background = BackgroundKind::checker;
    checker.bg_color = {0.35, 0.35, 0.35};
    checker.bg_color2 = {0.65, 0.65, 0.65};
    out.push_back(checker);

    DomainSpec dense = make_domain(4, "dense", vivid_palette(), image_size);
    dense.bg_color = {0.78, 0.78, 0.78};
    dense.min_objects = 4;
    dense.max_objects = 7;
    dense.min_radius = 0.04;
    dense.max_radius = 0.08;
    out.push_back(dense);

    for (const DomainSpec& d : out) d.validate();
    return out;
}

DomainSpec base_domain(int image_size) {
    DomainSpec d = make_domain(5, "plainbase",
                               {{{0.90, 0.30, 0.20},
                                 {0.20, 0.80, 0.30},
                                 {0.25, 0.35, 0.85},
                                 {0.90, 0.75, 0.20},
                                 {0.75, 0.25, 0.75},
                                 {0.20, 0.75, 0.75}}},
                               image_size);
    d.validate();
    return d;
}

std::vector<std::uint8_t> object_mask(const DomainSpec& spec, const PlacedObject& obj) {
    const int s = spec.image_size;
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(s) * s, 0);
    int x1 = std::max(0, static_cast<int>(std::floor(obj.cx - obj.r - 1)));
    int y1 = std::max(0, static_cast<int>(std::floor(obj.cy - obj.r - 1)));
    int x2 = std::min(s - 1, static_cast<int>(std::ceil(obj.cx + obj.r + 1)));
    int y2 = std::min(s - 1, static_cast<int>(std::ceil(obj.cy + obj.r + 1)));
    for (int y = y1; y <= y2; ++y)
        for (int x = x1; x <= x2; ++x)
            if (covered(spec, obj, x + 0.5, y + 0.5))
                mask[static_cast<std::size_t>(y) * s + x] = 1;
    return mask;
}

RenderedImage render_image(const DomainSpec& spec, std::uint64_t seed, int index,
                           int forced_single_category) {
    spec.validate();
    const int s = spec.image_size;
    RandomStream rng = RandomStream(seed).child("img").child(static_cast<std::uint64_t>(index));
    RandomStream bg_rng = rng.child("bg");
    RandomStream obj_rng = rng.child("obj");

    RenderedImage out;
    out.image = Image::filled(s, s, 0.0, 0.0, 0.0);
    paint_background(out.image, spec, bg_rng);

    int n = 1;
    if (forced_single_category < 0)
        n = spec.min_objects + obj_rng.uniform_int(spec.max_objects - spec.min_objects + 1);

    std::vector<PixelRect> occupied;
    for (int i = 0; i < n; ++i) {
        PlacedObject obj;
        obj.local_category = forced_single_category >= 0 ? forced_single_category
                                                         : obj_rng.uniform_int(kShapesPerDomain);

        bool placed = false;
        for (int attempt = 0; attempt < 500 && !placed; ++attempt) {
            // shrink the size range as attempts fail so placement always lands
            double hi = spec.max_radius;
            if (attempt >= 100)
                hi = std::max(spec.min_radius,
                              spec.max_radius * (1.0 - (attempt - 100) / 300.0));
            obj.r = obj_rng.uniform(spec.min_radius * s, hi * s);
            obj.cx = obj_rng.uniform(obj.r + 2.0, s - obj.r - 2.0);
            obj.cy = obj_rng.uniform(obj.r + 2.0, s - obj.r - 2.0);
            PixelRect rect{static_cast<int>(std::floor(obj.cx - obj.r)) - 1,
                           static_cast<int>(std::floor(obj.cy - obj.r)) - 1,
                           static_cast<int>(std::ceil(obj.cx + obj.r)) + 1,
                           static_cast<int>(std::ceil(obj.cy + obj.r)) + 1};
            placed = std::none_of(occupied.begin(), occupied.end(),
                                  [&](const PixelRect& o) { return rect.intersects(o); });
            if (placed) occupied.push_back(rect);
        }
        if (!placed)
            throw std::runtime_error("render_image: could not place a non-overlapping object");

        std::array<double, 3> color = spec.palette[static_cast<std::size_t>(obj.local_category)];
        for (double& ch : color) ch = std::clamp(ch + obj_rng.uniform(-0.05, 0.05), 0.0, 1.0);

        std::vector<std::uint8_t> mask = object_mask(spec, obj);
        int mx1 = s, my1 = s, mx2 = -1, my2 = -1;
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x)
                if (mask[static_cast<std::size_t>(y) * s + x]) {
                    for (int ch = 0; ch < 3; ++ch) out.image.at(x, y, ch) = color[ch];
                    mx1 = std::min(mx1, x);
                    my1 = std::min(my1, y);
                    mx2 = std::max(mx2, x);
                    my2 = std::max(my2, y);
                }
        if (mx2 < 0) throw std::runtime_error("render_image: empty object mask");

        // pixel-tight box from the coverage mask, normalized
        double bx1 = mx1 / static_cast<double>(s), bx2 = (mx2 + 1) / static_cast<double>(s);
        double by1 = my1 / static_cast<double>(s), by2 = (my2 + 1) / static_cast<double>(s);
        Box box = Box::center_size((bx1 + bx2) / 2.0, (by1 + by2) / 2.0, bx2 - bx1, by2 - by1);
        out.objects.push_back({box, spec.category_ids[static_cast<std::size_t>(obj.local_category)]});
        out.placed.push_back(obj);
    }
    return out;
}

void generate_domain(const DomainSpec& spec, const std::string& root, const GenerateCounts& counts,
                     std::uint64_t seed) {
    spec.validate();
    if (counts.n_train < 1 || counts.n_val < 0 || counts.n_test < 0)
        throw std::invalid_argument("bad split sizes");
    if (counts.singles_per_category < 0 ||
        counts.singles_per_category * kShapesPerDomain > counts.n_train)
        throw std::invalid_argument("singles_per_category does not fit in the train split");

    fs::create_directories(fs::path(root) / spec.name / "images");
    const std::array<std::pair<const char*, int>, 3> splits = {
        {{"train", counts.n_train}, {"val", counts.n_val}, {"test", counts.n_test}}};
    for (const auto& [split, n] : splits) {
        std::uint64_t split_seed = RandomStream(seed).child(spec.name).child(split).next_u64();
        DatasetSplit ds;
        for (int i = 0; i < kShapesPerDomain; ++i)
            ds.categories[spec.category_ids[static_cast<std::size_t>(i)]] =
                spec.category_names[static_cast<std::size_t>(i)];
        for (int idx = 0; idx < n; ++idx) {
            int forced = -1;
            if (std::string(split) == "train" && idx < counts.singles_per_category * kShapesPerDomain)
                forced = idx % kShapesPerDomain;
            RenderedImage ri = render_image(spec, split_seed, idx, forced);
            std::string file = spec.name + "/images/" + split + "_" + pad4(idx) + ".ppm";
            write_ppm(root + "/" + file, ri.image);
            ds.images.push_back({idx, file, spec.image_size, spec.image_size, ri.objects});
        }
        save_annotations((fs::path(root) / spec.name / (std::string(split) + ".json")).string(), ds);
    }
}

DatasetSplit load_split(const std::string& root, const std::string& domain_name,
                        const std::string& split) {
    return load_annotations((fs::path(root) / domain_name / (split + ".json")).string());
}

DatasetSplit sample_kshot(const DatasetSplit& train, int k, std::uint64_t seed) {
    if (k < 1) throw std::invalid_argument("sample_kshot: k must be >= 1");
    std::map<int, int> count;
    for (const auto& [cat, name] : train.categories) count[cat] = 0;

    std::vector<std::size_t> order(train.images.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    RandomStream rng(seed);
    rng.shuffle(order);

    std::vector<char> selected(train.images.size(), 0);
    auto occurrences = [&](const ImageRecord& rec) {
        std::map<int, int> occ;
        for (const GtObject& o : rec.objects) ++occ[o.category];
        return occ;
    };
    auto try_select = [&](std::size_t idx) {
        const ImageRecord& rec = train.images[idx];
        if (selected[idx] || rec.objects.empty()) return;
        std::map<int, int> occ = occurrences(rec);
        for (const auto& [cat, c] : occ) {
            auto it = count.find(cat);
            if (it == count.end())
                throw std::invalid_argument("sample_kshot: image references unknown category");
            if (it->second + c > k) return;
        }
        selected[idx] = 1;
        for (const auto& [cat, c] : occ) count[cat] += c;
    };
    for (std::size_t idx : order) try_select(idx);

    // top up short categories from still-unselected single-object images
    for (std::size_t idx : order) {
        const ImageRecord& rec = train.images[idx];
        if (selected[idx] || rec.objects.size() != 1) continue;
        int cat = rec.objects[0].category;
        if (count.at(cat) < k) {
            selected[idx] = 1;
            ++count.at(cat);
        }
    }
    for (const auto& [cat, c] : count)
        if (c != k)
            throw std::runtime_error("sample_kshot: category " + std::to_string(cat) +
                                     " reached " + std::to_string(c) + " of " + std::to_string(k) +
                                     " instances");

    DatasetSplit out;
    out.categories = train.categories;
    for (std::size_t i = 0; i < train.images.size(); ++i)
        if (selected[i]) out.images.push_back(train.images[i]);
    return out;
}

DatasetSplit build_cd_mixed(const DatasetSplit& target_test,
                            const std::vector<DatasetSplit>& other_tests) {
    DatasetSplit out;
    out.categories = target_test.categories;
    int next_id = 0;
    for (ImageRecord rec : target_test.images) {
        rec.id = next_id++;
        out.images.push_back(std::move(rec));
    }
    for (const DatasetSplit& other : other_tests) {
        for (const auto& [cat, name] : other.categories)
            if (target_test.categories.count(cat))
                throw std::invalid_argument("build_cd_mixed: category " + std::to_string(cat) +
                                            " overlaps the target domain");
        for (ImageRecord rec : other.images) {
            rec.id = next_id++;
            rec.objects.clear(); // OOD: no target-category ground truth
            out.images.push_back(std::move(rec));
        }
    }
    return out;
}

void generate_benchmark(const std::string& root, const BenchmarkManifest& manifest) {
    std::vector<const DomainSpec*> all;
    for (const DomainSpec& d : manifest.domains) all.push_back(&d);
    all.push_back(&manifest.base);
    check_disjoint(all);

    fs::create_directories(root);
    for (const DomainSpec* d : all) generate_domain(*d, root, manifest.counts, manifest.seed);

    json j{{"image_size", manifest.image_size},
           {"seed", manifest.seed},
           {"counts",
            {{"n_train", manifest.counts.n_train},
             {"n_val", manifest.counts.n_val},
             {"n_test", manifest.counts.n_test},
             {"singles_per_category", manifest.counts.singles_per_category}}},
           {"base", spec_to_json(manifest.base)},
           {"domains", json::array()}};
    for (const DomainSpec& d : manifest.domains) j["domains"].push_back(spec_to_json(d));
    std::ofstream out(fs::path(root) / "manifest.json");
    if (!out) throw std::runtime_error("generate_benchmark: cannot write manifest");
    out << j.dump(1) << "\n";
}

BenchmarkManifest load_manifest(const std::string& root) {
    std::ifstream in(fs::path(root) / "manifest.json");
    if (!in) throw std::runtime_error("load_manifest: no manifest.json under " + root);
    json j = json::parse(in);
    BenchmarkManifest m;
    m.image_size = j.at("image_size").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.counts.n_train = j.at("counts").at("n_train").get<int>();
    m.counts.n_val = j.at("counts").at("n_val").get<int>();
    m.counts.n_test = j.at("counts").at("n_test").get<int>();
    m.counts.singles_per_category = j.at("counts").at("singles_per_category").get<int>();
    m.base = spec_from_json(j.at("base"));
    for (const auto& dj : j.at("domains")) m.domains.push_back(spec_from_json(dj));
    return m;
}

} // namespace hedet
