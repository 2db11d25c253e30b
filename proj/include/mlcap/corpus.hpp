#ifndef MLCAP_CORPUS_HPP
#define MLCAP_CORPUS_HPP

// Procedural corpus of desk-scale 3D scenes: colored point clouds with
// multi-part objects, two-level template captions (object description and
// per-part description), synthetic cameras with view selection, and a
// versioned on-disk format (JSON index + binary geometry per scene).

#include "mlcap/geometry.hpp"
#include "mlcap/rng.hpp"

#include <json.hpp>

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace mlcap {

constexpr int kCaptionVariants = 5;

// ----------------------------------------------------------------- grammar

struct Grammar {
    std::vector<std::string> classes;
    std::vector<std::string> part_names;
    // attribute vocabularies; colors carry canonical RGB for point sampling
    std::vector<std::pair<std::string, std::array<float, 3>>> colors;
    std::vector<std::string> materials;
    std::vector<std::string> textures;
    std::vector<std::string> functions;
    std::vector<std::string> sizes;

    bool has_color(const std::string& c) const {
        for (auto& [name, rgb] : colors)
            if (name == c) return true;
        return false;
    }
    std::array<float, 3> color_rgb(const std::string& c) const {
        for (auto& [name, rgb] : colors)
            if (name == c) return rgb;
        throw std::invalid_argument("unknown color: " + c);
    }
    template <class V, class T>
    static bool contains(const V& v, const T& x) {
        return std::find(v.begin(), v.end(), x) != v.end();
    }
};

inline Grammar default_grammar() {
    Grammar g;
    g.classes = {"chair",   "table",    "lamp",       "sofa",     "bed",      "cabinet",
                 "desk",    "shelf",    "stool",      "bench",    "dresser",  "wardrobe",
                 "nightstand", "bookcase", "armchair", "ottoman",  "recliner", "sideboard",
                 "vanity",  "cart",     "mirror",     "piano"};
    g.part_names = {"seat", "back",    "leg",   "arm",    "top",    "drawer", "door",
                    "shade", "base",   "frame", "cushion", "panel", "handle", "headboard",
                    "knob",  "support"};
    g.colors = {{"red", {0.85f, 0.15f, 0.15f}},   {"blue", {0.15f, 0.25f, 0.85f}},
                {"green", {0.15f, 0.7f, 0.2f}},   {"yellow", {0.9f, 0.85f, 0.15f}},
                {"white", {0.95f, 0.95f, 0.95f}}, {"black", {0.08f, 0.08f, 0.08f}},
                {"brown", {0.55f, 0.35f, 0.15f}}, {"gray", {0.5f, 0.5f, 0.5f}},
                {"orange", {0.95f, 0.55f, 0.1f}}, {"purple", {0.55f, 0.2f, 0.7f}}};
    g.materials = {"wood", "metal", "fabric", "plastic", "glass", "leather"};
    g.textures = {"smooth", "rough", "glossy", "matte", "woven"};
    g.functions = {"sitting", "storage", "lighting", "sleeping", "working", "eating",
                   "decoration", "support"};
    g.sizes = {"tiny", "small", "medium", "large", "big"};
    return g;
}

// Every token the caption templates can ever emit.
inline std::set<std::string> grammar_terminals(const Grammar& g) {
    std::set<std::string> s;
    for (auto& c : g.classes) s.insert(c);
    for (auto& p : g.part_names) s.insert(p);
    for (auto& [c, rgb] : g.colors) s.insert(c);
    for (auto& m : g.materials) s.insert(m);
    for (auto& x : g.textures) s.insert(x);
    for (auto& f : g.functions) s.insert(f);
    for (auto& z : g.sizes) s.insert(z);
    for (const char* w : {"a", "the", "this", "one", "with", "has", "contains", "in",
                          "and", "parts", "used", "for", "an", "object", "no", "distinct",
                          "plain", "it", "is"})
        s.insert(w);
    for (int d = 0; d <= 9; ++d) s.insert(std::to_string(d));
    return s;
}

// -------------------------------------------------------------- scene types

struct PartRecord {
    int id = 0;
    std::string part_name;
    std::map<std::string, std::string> attributes;  // color/material/texture/function
    std::vector<int> point_ids;

    bool operator==(const PartRecord&) const = default;
};

struct CaptionSet {
    std::array<std::string, kCaptionVariants> object;
    std::array<std::string, kCaptionVariants> part;

    bool operator==(const CaptionSet&) const = default;
};

struct CaptionPair {
    std::string object_caption;
    std::string part_caption;
};

struct SceneObject {
    int id = 0;
    std::string class_label;
    Aabb aabb;
    std::vector<PartRecord> parts;
    std::vector<int> point_ids;
    CaptionSet captions;
    std::vector<int> view_ids;                  // selected camera ids (<= 3)
    std::vector<std::array<double, 4>> view_boxes;  // expanded+clamped 2D boxes per view

    bool degenerate() const { return parts.empty(); }
    CaptionPair caption_pair(int variant = 0) const {
        return {captions.object[variant], captions.part[variant]};
    }
    bool operator==(const SceneObject&) const = default;
};

struct SyntheticScene {
    std::string id;
    // flat float32 triples; kept as float so the binary format is bit-exact
    std::vector<float> points;
    std::vector<float> colors;
    std::vector<int32_t> point_object;  // -1 for background
    std::vector<int32_t> point_part;    // part id within owning object, -1 otherwise
    std::vector<SceneObject> objects;
    std::vector<Camera> cameras;

    size_t num_points() const { return points.size() / 3; }
    Eigen::Vector3d point(size_t i) const {
        return {points[3 * i], points[3 * i + 1], points[3 * i + 2]};
    }
    bool operator==(const SyntheticScene& o) const {
        return id == o.id && points == o.points && colors == o.colors &&
               point_object == o.point_object && point_part == o.point_part &&
               objects == o.objects && cameras_equal(o);
    }
    bool cameras_equal(const SyntheticScene& o) const {
        if (cameras.size() != o.cameras.size()) return false;
        for (size_t i = 0; i < cameras.size(); ++i) {
            const Camera &a = cameras[i], &b = o.cameras[i];
            if (a.id != b.id || a.rotation != b.rotation || a.translation != b.translation ||
                a.fx != b.fx || a.fy != b.fy || a.cx != b.cx || a.cy != b.cy ||
                a.width != b.width || a.height != b.height)
                return false;
        }
        return true;
    }
};

struct CorpusSpec {
    int num_scenes = 10;
    int objects_min = 3, objects_max = 6;
    int parts_min = 1, parts_max = 3;
    uint64_t grammar_seed = 1;
    uint64_t geometry_seed = 1;
    std::string label_schema = "v1";
    int points_per_part = 80;
    int background_points = 160;
    int num_cameras = 8;
    double zero_part_prob = 0.05;

    void validate() const {
        if (num_scenes < 0 || objects_min < 1 || objects_max < objects_min || parts_min < 1 ||
            parts_max < parts_min || points_per_part < 1 || num_cameras < 1)
            throw std::invalid_argument("CorpusSpec: invalid ranges");
    }
};

struct Corpus {
    CorpusSpec spec;
    std::vector<SyntheticScene> scenes;

    bool operator==(const Corpus& o) const { return scenes == o.scenes; }
};

// ----------------------------------------------------------------- captions

namespace detail {

inline std::string join(const std::vector<std::string>& v, const std::string& sep) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += sep;
        out += v[i];
    }
    return out;
}

inline std::string size_word(const Grammar& g, double volume) {
    if (volume < 0.05) return g.sizes[0];
    if (volume < 0.20) return g.sizes[1];
    if (volume < 0.60) return g.sizes[2];
    if (volume < 1.50) return g.sizes[3];
    return g.sizes[4];
}

// Surface templates; > kCaptionVariants of each so that different seeds
// produce different variant sets with identical attribute content.
inline std::string object_template(int idx, const std::string& size, const std::string& colors,
                                   const std::string& cls, int nparts) {
    std::string n = std::to_string(nparts);
    switch (idx % 7) {
        case 0: return "a " + size + " " + colors + " " + cls + " with " + n + " parts";
        case 1: return "the " + size + " " + colors + " " + cls + " has " + n + " parts";
        case 2: return "a " + size + " " + cls + " in " + colors + " with " + n + " parts";
        case 3: return "this " + size + " " + colors + " " + cls + " contains " + n + " parts";
        case 4: return "one " + size + " " + colors + " " + cls + " with " + n + " parts";
        case 5: return "the " + cls + " is " + size + " and " + colors + " with " + n + " parts";
        default: return "this " + cls + " in " + colors + " is " + size + " with " + n + " parts";
    }
}

inline std::string part_clause(int idx, const PartRecord& p) {
    const std::string& color = p.attributes.at("color");
    const std::string& mat = p.attributes.at("material");
    const std::string& tex = p.attributes.at("texture");
    const std::string& fn = p.attributes.at("function");
    switch (idx % 4) {
        case 0: return "a " + color + " " + tex + " " + mat + " " + p.part_name + " used for " + fn;
        case 1:
            return "the " + tex + " " + mat + " " + p.part_name + " in " + color + " used for " + fn;
        case 2: return "a " + mat + " " + p.part_name + " in " + tex + " " + color + " used for " + fn;
        default:
            return "the " + color + " " + p.part_name + " in " + tex + " " + mat + " used for " + fn;
    }
}

}  // namespace detail

inline const std::string kNoPartsSentinel = "an object with no distinct parts";

// Emits kCaptionVariants surface variants per level. The seed rotates the
// surface templates; the attribute content is identical across variants
// and across seeds. Variant 0 is the evaluation reference.
inline CaptionSet synthesize_captions(const SceneObject& object, const Grammar& grammar,
                                      uint64_t seed) {
    if (!Grammar::contains(grammar.classes, object.class_label))
        throw std::invalid_argument("synthesize_captions: class outside grammar: " +
                                    object.class_label);
    for (const auto& p : object.parts) {
        if (!Grammar::contains(grammar.part_names, p.part_name))
            throw std::invalid_argument("synthesize_captions: part outside grammar");
        if (!grammar.has_color(p.attributes.at("color")) ||
            !Grammar::contains(grammar.materials, p.attributes.at("material")) ||
            !Grammar::contains(grammar.textures, p.attributes.at("texture")) ||
            !Grammar::contains(grammar.functions, p.attributes.at("function")))
            throw std::invalid_argument("synthesize_captions: attribute outside grammar");
    }

    std::vector<std::string> distinct_colors;
    for (const auto& p : object.parts) {
        const std::string& c = p.attributes.at("color");
        if (!Grammar::contains(distinct_colors, c)) distinct_colors.push_back(c);
    }
    std::string colors = distinct_colors.empty() ? std::string("plain")
                                                 : detail::join(distinct_colors, " and ");
    std::string size = detail::size_word(grammar, object.aabb.volume());

    auto rng = make_rng(seed, "caption-surface", static_cast<uint64_t>(object.id));
    int obj_offset = uniform_int(rng, 0, 6);
    int part_offset = uniform_int(rng, 0, 3);

    CaptionSet out;
    for (int v = 0; v < kCaptionVariants; ++v) {
        out.object[v] = detail::object_template(obj_offset + v, size, colors, object.class_label,
                                                static_cast<int>(object.parts.size()));
        if (object.parts.empty()) {
            out.part[v] = kNoPartsSentinel;
        } else {
            std::vector<std::string> clauses;
            for (const auto& p : object.parts)
                clauses.push_back(detail::part_clause(part_offset + v, p));
            out.part[v] = detail::join(clauses, " and ");
        }
    }
    return out;
}

// ----------------------------------------------------- views and 2D boxes

// Fraction of the object's points that project inside the image and win
// (or tie) the per-pixel nearest-depth test against the whole scene.
inline double view_coverage(const SyntheticScene& scene, const SceneObject& object,
                            const Camera& cam) {
    if (object.point_ids.empty()) return 0.0;
    std::vector<double> zbuf(static_cast<size_t>(cam.width) * cam.height,
                             std::numeric_limits<double>::infinity());
    std::vector<std::optional<PixelPoint>> proj(scene.num_points());
    for (size_t i = 0; i < scene.num_points(); ++i) {
        proj[i] = cam.project(scene.point(i));
        if (!proj[i] || !cam.inside(proj[i]->u, proj[i]->v)) continue;
        size_t px = static_cast<size_t>(proj[i]->v) * cam.width + static_cast<size_t>(proj[i]->u);
        zbuf[px] = std::min(zbuf[px], proj[i]->depth);
    }
    int visible = 0;
    for (int pid : object.point_ids) {
        const auto& pp = proj[static_cast<size_t>(pid)];
        if (!pp || !cam.inside(pp->u, pp->v)) continue;
        size_t px = static_cast<size_t>(pp->v) * cam.width + static_cast<size_t>(pp->u);
        if (pp->depth <= zbuf[px] + 1e-4) ++visible;
    }
    return static_cast<double>(visible) / static_cast<double>(object.point_ids.size());
}

// Threshold-and-rank rule on precomputed coverages: keep cameras covering
// at least 10% of the object, rank by coverage (ties: lower camera id),
// return at most the top 3.
inline std::vector<int> select_views(const std::vector<double>& coverages,
                                     double min_coverage = 0.10, int top_k = 3) {
    std::vector<int> ids;
    for (int i = 0; i < static_cast<int>(coverages.size()); ++i)
        if (coverages[i] >= min_coverage) ids.push_back(i);
    std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
        if (coverages[a] != coverages[b]) return coverages[a] > coverages[b];
        return a < b;
    });
    if (static_cast<int>(ids.size()) > top_k) ids.resize(top_k);
    return ids;
}

inline std::vector<int> select_views(const SyntheticScene& scene, const SceneObject& object,
                                     const std::vector<Camera>& cameras) {
    if (cameras.empty()) throw std::invalid_argument("select_views: no cameras");
    std::vector<double> cov;
    cov.reserve(cameras.size());
    for (const auto& c : cameras) cov.push_back(view_coverage(scene, object, c));
    std::vector<int> idx = select_views(cov);
    std::vector<int> ids;
    for (int i : idx) ids.push_back(cameras[static_cast<size_t>(i)].id);
    return ids;
}

inline Box2D expand_box(const Box2D& b, double factor) {
    double cx = (b.x0 + b.x1) / 2.0, cy = (b.y0 + b.y1) / 2.0;
    double hw = (b.x1 - b.x0) / 2.0 * (1.0 + factor);
    double hh = (b.y1 - b.y0) / 2.0 * (1.0 + factor);
    return {cx - hw, cy - hh, cx + hw, cy + hh};
}

// Tight 2D box of the projected object points, expanded 10% about its
// center, clamped to the image; dropped if either final dimension is
// under 50 px. Works on continuous pixel coordinates.
inline std::optional<Box2D> project_and_filter_box(const SyntheticScene& scene,
                                                   const SceneObject& object, const Camera& cam,
                                                   double expand = 0.10, double min_dim = 50.0) {
    if (!cam.valid()) throw std::invalid_argument("project_and_filter_box: invalid camera");
    double x0 = std::numeric_limits<double>::infinity(), y0 = x0;
    double x1 = -x0, y1 = -y0;
    bool any = false;
    for (int pid : object.point_ids) {
        auto pp = cam.project(scene.point(static_cast<size_t>(pid)));
        if (!pp) continue;
        any = true;
        x0 = std::min(x0, pp->u);
        x1 = std::max(x1, pp->u);
        y0 = std::min(y0, pp->v);
        y1 = std::max(y1, pp->v);
    }
    if (!any) return std::nullopt;
    Box2D box = expand_box({x0, y0, x1, y1}, expand);
    box.x0 = std::clamp(box.x0, 0.0, static_cast<double>(cam.width));
    box.x1 = std::clamp(box.x1, 0.0, static_cast<double>(cam.width));
    box.y0 = std::clamp(box.y0, 0.0, static_cast<double>(cam.height));
    box.y1 = std::clamp(box.y1, 0.0, static_cast<double>(cam.height));
    if (box.width() < min_dim || box.height() < min_dim) return std::nullopt;
    return box;
}

// ----------------------------------------------------------------- genesis

namespace detail {

inline float noisy_channel(std::mt19937_64& g, float base, float sigma = 0.03f) {
    double v = base + gaussian(g, 0.0, sigma);
    return static_cast<float>(std::clamp(v, 0.0, 1.0));
}

}  // namespace detail

inline SyntheticScene generate_scene(const CorpusSpec& spec, const Grammar& grammar,
                                     int scene_index) {
    auto geo = make_rng(spec.geometry_seed, "scene-geometry", static_cast<uint64_t>(scene_index));
    SyntheticScene scene;
    {
        std::ostringstream os;
        os << "scene" << std::setw(4) << std::setfill('0') << scene_index;
        scene.id = os.str();
    }

    int n_objects = uniform_int(geo, spec.objects_min, spec.objects_max);
    int grid = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_objects))));
    const double cell = 1.6;
    double extent = grid * cell;

    // shuffled cell order so object placement is not raster-ordered
    std::vector<int> cells(static_cast<size_t>(grid) * grid);
    for (size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
    std::shuffle(cells.begin(), cells.end(), geo);

    auto add_point = [&](float x, float y, float z, float r, float g, float b, int obj, int part) {
        scene.points.insert(scene.points.end(), {x, y, z});
        scene.colors.insert(scene.colors.end(), {r, g, b});
        scene.point_object.push_back(obj);
        scene.point_part.push_back(part);
    };

    for (int oi = 0; oi < n_objects; ++oi) {
        int c = cells[static_cast<size_t>(oi)];
        double cx = (c % grid) * cell + cell / 2.0 - extent / 2.0;
        double cy = (c / grid) * cell + cell / 2.0 - extent / 2.0;
        double sx = uniform(geo, 0.3, 1.2), sy = uniform(geo, 0.3, 1.2),
               sz = uniform(geo, 0.3, 1.2);

        SceneObject obj;
        obj.id = oi;
        obj.class_label = grammar.classes[static_cast<size_t>(
            uniform_int(geo, 0, static_cast<int>(grammar.classes.size()) - 1))];
        obj.aabb.min = {cx - sx / 2.0, cy - sy / 2.0, 0.0};
        obj.aabb.max = {cx + sx / 2.0, cy + sy / 2.0, sz};

        int n_parts = uniform_int(geo, spec.parts_min, spec.parts_max);
        if (uniform(geo, 0.0, 1.0) < spec.zero_part_prob) n_parts = 0;

        if (n_parts == 0) {
            // degenerate object: uniform gray fill, no part records
            for (int k = 0; k < spec.points_per_part; ++k) {
                float x = static_cast<float>(uniform(geo, obj.aabb.min.x(), obj.aabb.max.x()));
                float y = static_cast<float>(uniform(geo, obj.aabb.min.y(), obj.aabb.max.y()));
                float z = static_cast<float>(uniform(geo, obj.aabb.min.z(), obj.aabb.max.z()));
                obj.point_ids.push_back(static_cast<int>(scene.num_points()));
                add_point(x, y, z, detail::noisy_channel(geo, 0.5f),
                          detail::noisy_channel(geo, 0.5f), detail::noisy_channel(geo, 0.5f), oi,
                          -1);
            }
        } else {
            // split the object box into vertical slabs, one per part
            std::vector<std::string> names = grammar.part_names;
            std::shuffle(names.begin(), names.end(), geo);
            double z0 = obj.aabb.min.z();
            double dz = (obj.aabb.max.z() - obj.aabb.min.z()) / n_parts;
            for (int pi = 0; pi < n_parts; ++pi) {
                PartRecord part;
                part.id = pi;
                part.part_name = names[static_cast<size_t>(pi)];
                const auto& col = grammar.colors[static_cast<size_t>(
                    uniform_int(geo, 0, static_cast<int>(grammar.colors.size()) - 1))];
                part.attributes["color"] = col.first;
                part.attributes["material"] = grammar.materials[static_cast<size_t>(
                    uniform_int(geo, 0, static_cast<int>(grammar.materials.size()) - 1))];
                part.attributes["texture"] = grammar.textures[static_cast<size_t>(
                    uniform_int(geo, 0, static_cast<int>(grammar.textures.size()) - 1))];
                part.attributes["function"] = grammar.functions[static_cast<size_t>(
                    uniform_int(geo, 0, static_cast<int>(grammar.functions.size()) - 1))];
                for (int k = 0; k < spec.points_per_part; ++k) {
                    float x = static_cast<float>(uniform(geo, obj.aabb.min.x(), obj.aabb.max.x()));
                    float y = static_cast<float>(uniform(geo, obj.aabb.min.y(), obj.aabb.max.y()));
                    float z = static_cast<float>(uniform(geo, z0 + pi * dz, z0 + (pi + 1) * dz));
                    int pid = static_cast<int>(scene.num_points());
                    part.point_ids.push_back(pid);
                    obj.point_ids.push_back(pid);
                    add_point(x, y, z, detail::noisy_channel(geo, col.second[0]),
                              detail::noisy_channel(geo, col.second[1]),
                              detail::noisy_channel(geo, col.second[2]), oi, pi);
                }
                obj.parts.push_back(std::move(part));
            }
        }
        obj.captions = synthesize_captions(obj, grammar, spec.grammar_seed);
        scene.objects.push_back(std::move(obj));
    }

    // background floor
    for (int k = 0; k < spec.background_points; ++k) {
        float x = static_cast<float>(uniform(geo, -extent / 2.0, extent / 2.0));
        float y = static_cast<float>(uniform(geo, -extent / 2.0, extent / 2.0));
        float z = static_cast<float>(uniform(geo, 0.0, 0.01));
        add_point(x, y, z, detail::noisy_channel(geo, 0.6f), detail::noisy_channel(geo, 0.6f),
                  detail::noisy_channel(geo, 0.6f), -1, -1);
    }

    // ring of cameras around the scene
    double radius = extent * 0.9 + 1.5;
    for (int ci = 0; ci < spec.num_cameras; ++ci) {
        double ang = 2.0 * M_PI * ci / spec.num_cameras;
        Eigen::Vector3d eye(radius * std::cos(ang), radius * std::sin(ang), 2.2);
        scene.cameras.push_back(
            look_at_camera(ci, eye, Eigen::Vector3d(0, 0, 0.5), 450.0, 450.0, 640, 480));
    }

    // paper-style view metadata: top-3 covering views and filtered 2D boxes
    for (auto& obj : scene.objects) {
        obj.view_ids = select_views(scene, obj, scene.cameras);
        for (int vid : obj.view_ids) {
            auto box = project_and_filter_box(scene, obj, scene.cameras[static_cast<size_t>(vid)]);
            obj.view_boxes.push_back(box ? std::array<double, 4>{box->x0, box->y0, box->x1, box->y1}
                                         : std::array<double, 4>{0, 0, 0, 0});
        }
    }
    return scene;
}

inline Corpus generate_corpus(const CorpusSpec& spec, const Grammar& grammar = default_grammar()) {
    spec.validate();
    Corpus corpus;
    corpus.spec = spec;
    corpus.scenes.reserve(static_cast<size_t>(spec.num_scenes));
    for (int i = 0; i < spec.num_scenes; ++i)
        corpus.scenes.push_back(generate_scene(spec, grammar, i));
    return corpus;
}

// ------------------------------------------------------------ serialization

constexpr const char* kCorpusFormatVersion = "mlcap-corpus-v1";

namespace detail {

using nlohmann::json;

inline json camera_to_json(const Camera& c) {
    json j;
    j["id"] = c.id;
    std::array<double, 9> rot;
    for (int r = 0; r < 3; ++r)
        for (int k = 0; k < 3; ++k) rot[static_cast<size_t>(3 * r + k)] = c.rotation(r, k);
    j["rotation"] = rot;
    j["translation"] = std::array<double, 3>{c.translation.x(), c.translation.y(),
                                             c.translation.z()};
    j["fx"] = c.fx;
    j["fy"] = c.fy;
    j["cx"] = c.cx;
    j["cy"] = c.cy;
    j["width"] = c.width;
    j["height"] = c.height;
    return j;
}

inline Camera camera_from_json(const json& j) {
    Camera c;
    c.id = j.at("id");
    auto rot = j.at("rotation").get<std::array<double, 9>>();
    for (int r = 0; r < 3; ++r)
        for (int k = 0; k < 3; ++k) c.rotation(r, k) = rot[static_cast<size_t>(3 * r + k)];
    auto tr = j.at("translation").get<std::array<double, 3>>();
    c.translation = {tr[0], tr[1], tr[2]};
    c.fx = j.at("fx");
    c.fy = j.at("fy");
    c.cx = j.at("cx");
    c.cy = j.at("cy");
    c.width = j.at("width");
    c.height = j.at("height");
    return c;
}

template <class T>
void write_vec(std::ostream& os, const std::vector<T>& v) {
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(sizeof(T) * v.size()));
}

template <class T>
void read_vec(std::istream& is, std::vector<T>& v, size_t count) {
    v.resize(count);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(sizeof(T) * count));
    if (!is) throw std::runtime_error("corpus: truncated scene file");
}

}  // namespace detail

inline void serialize_corpus(const Corpus& corpus, const std::string& dir) {
    namespace fs = std::filesystem;
    using nlohmann::json;
    fs::create_directories(fs::path(dir) / "scenes");

    json index;
    index["format_version"] = kCorpusFormatVersion;
    index["label_schema"] = corpus.spec.label_schema;
    index["spec"] = {{"num_scenes", corpus.spec.num_scenes},
                     {"objects_min", corpus.spec.objects_min},
                     {"objects_max", corpus.spec.objects_max},
                     {"parts_min", corpus.spec.parts_min},
                     {"parts_max", corpus.spec.parts_max},
                     {"grammar_seed", corpus.spec.grammar_seed},
                     {"geometry_seed", corpus.spec.geometry_seed},
                     {"points_per_part", corpus.spec.points_per_part},
                     {"background_points", corpus.spec.background_points},
                     {"num_cameras", corpus.spec.num_cameras},
                     {"zero_part_prob", corpus.spec.zero_part_prob}};
    std::vector<std::string> ids;
    for (const auto& s : corpus.scenes) ids.push_back(s.id);
    index["scene_ids"] = ids;
    std::ofstream(fs::path(dir) / "corpus.json") << index.dump(2) << "\n";

    for (const auto& scene : corpus.scenes) {
        // binary geometry
        std::ofstream bin(fs::path(dir) / "scenes" / (scene.id + ".bin"), std::ios::binary);
        bin.write("MLCSCN1\n", 8);
        uint64_t n = scene.num_points();
        bin.write(reinterpret_cast<const char*>(&n), sizeof(n));
        detail::write_vec(bin, scene.points);
        detail::write_vec(bin, scene.colors);
        detail::write_vec(bin, scene.point_object);
        detail::write_vec(bin, scene.point_part);

        // JSON metadata
        json meta;
        meta["id"] = scene.id;
        json objs = json::array();
        for (const auto& o : scene.objects) {
            json jo;
            jo["id"] = o.id;
            jo["class"] = o.class_label;
            jo["aabb_min"] = std::array<double, 3>{o.aabb.min.x(), o.aabb.min.y(), o.aabb.min.z()};
            jo["aabb_max"] = std::array<double, 3>{o.aabb.max.x(), o.aabb.max.y(), o.aabb.max.z()};
            json parts = json::array();
            for (const auto& p : o.parts)
                parts.push_back({{"id", p.id}, {"name", p.part_name}, {"attributes", p.attributes}});
            jo["parts"] = parts;
            jo["object_captions"] = o.captions.object;
            jo["part_captions"] = o.captions.part;
            jo["view_ids"] = o.view_ids;
            jo["view_boxes"] = o.view_boxes;
            objs.push_back(jo);
        }
        meta["objects"] = objs;
        json cams = json::array();
        for (const auto& c : scene.cameras) cams.push_back(detail::camera_to_json(c));
        meta["cameras"] = cams;
        std::ofstream(fs::path(dir) / "scenes" / (scene.id + ".meta.json")) << meta.dump(2) << "\n";
    }
}

inline Corpus load_corpus(const std::string& dir) {
    namespace fs = std::filesystem;
    using nlohmann::json;
    std::ifstream idx(fs::path(dir) / "corpus.json");
    if (!idx) throw std::runtime_error("corpus: missing index at " + dir);
    json index = json::parse(idx);
    if (index.at("format_version") != kCorpusFormatVersion)
        throw std::runtime_error("corpus: unsupported format version " +
                                 index.at("format_version").get<std::string>());

    Corpus corpus;
    const auto& js = index.at("spec");
    corpus.spec.num_scenes = js.at("num_scenes");
    corpus.spec.objects_min = js.at("objects_min");
    corpus.spec.objects_max = js.at("objects_max");
    corpus.spec.parts_min = js.at("parts_min");
    corpus.spec.parts_max = js.at("parts_max");
    corpus.spec.grammar_seed = js.at("grammar_seed");
    corpus.spec.geometry_seed = js.at("geometry_seed");
    corpus.spec.points_per_part = js.at("points_per_part");
    corpus.spec.background_points = js.at("background_points");
    corpus.spec.num_cameras = js.at("num_cameras");
    corpus.spec.zero_part_prob = js.at("zero_part_prob");
    corpus.spec.label_schema = index.at("label_schema");

    for (const auto& sid : index.at("scene_ids")) {
        SyntheticScene scene;
        scene.id = sid.get<std::string>();

        std::ifstream bin(fs::path(dir) / "scenes" / (scene.id + ".bin"), std::ios::binary);
        if (!bin) throw std::runtime_error("corpus: missing scene file " + scene.id);
        char magic[8];
        bin.read(magic, 8);
        if (!bin || std::string(magic, 8) != "MLCSCN1\n")
            throw std::runtime_error("corpus: bad scene magic in " + scene.id);
        uint64_t n = 0;
        bin.read(reinterpret_cast<char*>(&n), sizeof(n));
        if (!bin) throw std::runtime_error("corpus: truncated scene file");
        detail::read_vec(bin, scene.points, 3 * n);
        detail::read_vec(bin, scene.colors, 3 * n);
        detail::read_vec(bin, scene.point_object, n);
        detail::read_vec(bin, scene.point_part, n);

        std::ifstream ms(fs::path(dir) / "scenes" / (scene.id + ".meta.json"));
        if (!ms) throw std::runtime_error("corpus: missing scene metadata " + scene.id);
        json meta = json::parse(ms);
        for (const auto& jo : meta.at("objects")) {
            SceneObject o;
            o.id = jo.at("id");
            o.class_label = jo.at("class");
            auto mn = jo.at("aabb_min").get<std::array<double, 3>>();
            auto mx = jo.at("aabb_max").get<std::array<double, 3>>();
            o.aabb.min = {mn[0], mn[1], mn[2]};
            o.aabb.max = {mx[0], mx[1], mx[2]};
            for (const auto& jp : jo.at("parts")) {
                PartRecord p;
                p.id = jp.at("id");
                p.part_name = jp.at("name");
                p.attributes = jp.at("attributes").get<std::map<std::string, std::string>>();
                o.parts.push_back(std::move(p));
            }
            o.captions.object = jo.at("object_captions");
            o.captions.part = jo.at("part_captions");
            o.view_ids = jo.at("view_ids").get<std::vector<int>>();
            o.view_boxes = jo.at("view_boxes").get<std::vector<std::array<double, 4>>>();
            scene.objects.push_back(std::move(o));
        }
        // point ownership is authoritative in the binary file
        for (size_t i = 0; i < scene.num_points(); ++i) {
            int32_t oid = scene.point_object[i];
            if (oid < 0) continue;
            auto& o = scene.objects[static_cast<size_t>(oid)];
            o.point_ids.push_back(static_cast<int>(i));
            int32_t pid = scene.point_part[i];
            if (pid >= 0) o.parts[static_cast<size_t>(pid)].point_ids.push_back(static_cast<int>(i));
        }
        for (const auto& jc : meta.at("cameras"))
            scene.cameras.push_back(detail::camera_from_json(jc));
        corpus.scenes.push_back(std::move(scene));
    }
    return corpus;
}

inline std::vector<std::string> tokenize(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

}  // namespace mlcap

#endif
