#include "dereflect/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include <opencv2/imgproc.hpp>

#include "dereflect/image_io.hpp"

namespace dereflect::datagen {

using json = nlohmann::json;

void validate(const MixCoefficients& c) {
    if (!(c.gamma1 >= 0.8 && c.gamma1 <= 1.0)) {
        throw ValidationError("gamma1 " + std::to_string(c.gamma1) + " outside [0.8, 1.0]");
    }
    if (!(c.gamma2 >= 0.4 && c.gamma2 <= 1.0)) {
        throw ValidationError("gamma2 " + std::to_string(c.gamma2) + " outside [0.4, 1.0]");
    }
}

void CoefficientRanges::validate() const {
    if (!(gamma1_min <= gamma1_max) || !(gamma2_min <= gamma2_max)) {
        throw ValidationError("coefficient range has min > max");
    }
    datagen::validate(MixCoefficients{gamma1_min, gamma2_min});
    datagen::validate(MixCoefficients{gamma1_max, gamma2_max});
}

ImageTensor mix(const ImageTensor& transmission, const ImageTensor& reflection, const MixCoefficients& coeffs) {
    require_same_shape(transmission, reflection, "mix");
    validate(coeffs);
    ImageTensor out(transmission.shape());
    const std::size_t n = out.size();
#pragma omp parallel for simd schedule(static)
    for (std::size_t i = 0; i < n; ++i) {
        const double m = mix_value(transmission[i], reflection[i], coeffs);
        out[i] = static_cast<float>(std::clamp(m, 0.0, 1.0));
    }
    return out;
}

MixCoefficients sample_coefficients(Rng& rng, const CoefficientRanges& ranges) {
    ranges.validate();
    MixCoefficients c;
    c.gamma1 = ranges.gamma1_min == ranges.gamma1_max ? ranges.gamma1_min
                                                      : uniform(rng, ranges.gamma1_min, ranges.gamma1_max);
    c.gamma2 = ranges.gamma2_min == ranges.gamma2_max ? ranges.gamma2_min
                                                      : uniform(rng, ranges.gamma2_min, ranges.gamma2_max);
    return c;
}

SceneGroup generate_scene(const ImageTensor& transmission, std::span<const ImageTensor> reflections, Rng& rng,
                          const std::string& scene_id, const CoefficientRanges& ranges) {
    if (reflections.empty()) throw ValidationError("generate_scene: empty reflection list");
    SceneGroup group;
    group.scene_id = scene_id;
    group.triples.reserve(reflections.size());
    for (std::size_t i = 0; i < reflections.size(); ++i) {
        MixTriple t;
        t.scene_id = scene_id;
        t.name = scene_id + "_" + std::to_string(i);
        t.transmission = transmission;
        t.reflection = reflections[i];
        t.coeffs = sample_coefficients(rng, ranges);
        t.mixed = mix(t.transmission, t.reflection, t.coeffs);
        group.triples.push_back(std::move(t));
    }
    return group;
}

double formula_residual(const MixTriple& t) {
    require_same_shape(t.transmission, t.mixed, "formula_residual");
    require_same_shape(t.reflection, t.mixed, "formula_residual");
    double worst = 0.0;
    for (std::size_t i = 0; i < t.mixed.size(); ++i) {
        const double m = std::clamp(mix_value(t.transmission[i], t.reflection[i], t.coeffs), 0.0, 1.0);
        worst = std::max(worst, std::abs(m - double(t.mixed[i])));
    }
    return worst;
}

double HeuristicRealismScorer::score(const MixTriple& triple) const {
    const ImageTensor& m = triple.mixed;
    const ImageTensor& t = triple.transmission;
    require_same_shape(m, t, "HeuristicRealismScorer");
    const int h = m.height(), w = m.width();
    cv::Mat residual(h, w, CV_64F);
    std::size_t clipped = 0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double luma = 0.0;
            bool clip = false;
            static constexpr double kLuma[3] = {0.299, 0.587, 0.114};
            for (int c = 0; c < 3; ++c) {
                luma += kLuma[c] * (double(m.at(c, y, x)) - triple.coeffs.gamma1 * t.at(c, y, x));
                clip = clip || m.at(c, y, x) >= w_.clip_level;
            }
            residual.at<double>(y, x) = luma;
            clipped += clip ? 1 : 0;
        }
    }
    cv::Mat fine, coarse;
    cv::GaussianBlur(residual, fine, cv::Size(0, 0), w_.fine_sigma, w_.fine_sigma, cv::BORDER_REFLECT);
    cv::GaussianBlur(residual, coarse, cv::Size(0, 0), w_.coarse_sigma, w_.coarse_sigma, cv::BORDER_REFLECT);
    cv::Mat band = fine - coarse;
    cv::Scalar mean, stddev;
    cv::meanStdDev(band, mean, stddev);
    const double clip_fraction = double(clipped) / double(h * w);
    return stddev[0] - w_.clip_penalty * clip_fraction;
}

EmbeddingRealismScorer::EmbeddingRealismScorer(Embedder embedder, std::vector<float> prompt_embedding)
    : embedder_(std::move(embedder)), prompt_(std::move(prompt_embedding)) {
    if (!embedder_) throw ValidationError("embedding scorer needs an embedder");
    if (prompt_.empty()) throw ValidationError("empty prompt embedding");
}

double EmbeddingRealismScorer::score(const MixTriple& triple) const {
    const std::vector<float> e = embedder_(triple);
    if (e.size() != prompt_.size()) throw DimensionError("embedding dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) {
        dot += double(e[i]) * prompt_[i];
        na += double(e[i]) * e[i];
        nb += double(prompt_[i]) * prompt_[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / std::sqrt(na * nb);
}

std::unique_ptr<EmbeddingRealismScorer> load_embedding_scorer(const std::filesystem::path& cache_dir) {
    std::ifstream pf(cache_dir / "prompt_embedding.json");
    if (!pf) throw ValidationError("missing prompt_embedding.json in " + cache_dir.string());
    std::vector<float> prompt = json::parse(pf).get<std::vector<float>>();

    std::ifstream ef(cache_dir / "image_embeddings.jsonl");
    if (!ef) throw ValidationError("missing image_embeddings.jsonl in " + cache_dir.string());
    auto table = std::make_shared<std::map<std::string, std::vector<float>>>();
    std::string line;
    while (std::getline(ef, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        (*table)[j.at("name").get<std::string>()] = j.at("embedding").get<std::vector<float>>();
    }
    auto embedder = [table](const MixTriple& t) {
        auto it = table->find(t.name);
        if (it == table->end()) throw ValidationError("no cached embedding for " + t.name);
        return it->second;
    };
    return std::make_unique<EmbeddingRealismScorer>(embedder, std::move(prompt));
}

std::size_t keep_count(double keep_fraction, std::size_t n) {
    if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
        throw ValidationError("keep_fraction must lie in (0, 1]");
    }
    const double x = keep_fraction * double(n);
    const double r = std::round(x);
    const std::size_t k = std::abs(x - r) < 1e-9 * std::max(1.0, double(n)) ? std::size_t(r)
                                                                            : std::size_t(std::ceil(x));
    return std::min(k, n);
}

std::vector<std::size_t> rank_by_score(std::span<const double> scores, std::span<const std::string> scene_ids) {
    if (scores.size() != scene_ids.size()) throw DimensionError("rank_by_score: size mismatch");
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return scene_ids[a] < scene_ids[b];
    });
    return idx;
}

std::vector<std::size_t> select_top_fraction(std::span<const double> scores, std::span<const std::string> scene_ids,
                                             double keep_fraction) {
    const std::size_t k = keep_count(keep_fraction, scores.size());
    std::vector<std::size_t> idx = rank_by_score(scores, scene_ids);
    idx.resize(k);
    return idx;
}

namespace {

void score_all(const std::vector<MixTriple>& triples, const RealismScorer& scorer, std::vector<double>& scores,
               std::vector<std::string>& ids) {
    scores.resize(triples.size());
    ids.resize(triples.size());
    for (std::size_t i = 0; i < triples.size(); ++i) {
        scores[i] = scorer.score(triples[i]);
        ids[i] = triples[i].scene_id;
    }
}

} // namespace

std::vector<MixTriple> filter_by_realism(const std::vector<MixTriple>& triples, const RealismScorer& scorer,
                                         double keep_fraction) {
    if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
        throw ValidationError("keep_fraction must lie in (0, 1]");
    }
    if (triples.empty()) return {};
    std::vector<double> scores;
    std::vector<std::string> ids;
    score_all(triples, scorer, scores, ids);
    std::vector<MixTriple> out;
    for (std::size_t i : select_top_fraction(scores, ids, keep_fraction)) out.push_back(triples[i]);
    return out;
}

std::vector<MixTriple> filter_by_threshold(const std::vector<MixTriple>& triples, const RealismScorer& scorer,
                                           double min_score) {
    std::vector<double> scores;
    std::vector<std::string> ids;
    score_all(triples, scorer, scores, ids);
    std::vector<MixTriple> out;
    for (std::size_t i : rank_by_score(scores, ids)) {
        if (scores[i] >= min_score) out.push_back(triples[i]);
    }
    return out;
}

ImageTensor procedural_texture(int size, Rng& rng) {
    if (size < 8) throw ValidationError("procedural_texture: size < 8");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    cv::Mat canvas(size, size, CV_64FC3);

    // background gradient
    const cv::Vec3d c0(u(rng), u(rng), u(rng));
    const cv::Vec3d c1(u(rng), u(rng), u(rng));
    const double angle = u(rng) * 2.0 * M_PI;
    const double dx = std::cos(angle), dy = std::sin(angle);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double s = 0.5 + ((x - size / 2.0) * dx + (y - size / 2.0) * dy) / size;
            const double a = std::clamp(s, 0.0, 1.0);
            canvas.at<cv::Vec3d>(y, x) = c0 * (1.0 - a) + c1 * a;
        }
    }

    // gaussian blobs
    const int blobs = 3 + int(u(rng) * 6);
    for (int b = 0; b < blobs; ++b) {
        const double cx = u(rng) * size, cy = u(rng) * size;
        const double sigma = size * (0.05 + 0.2 * u(rng));
        const double alpha = 0.4 + 0.6 * u(rng);
        const cv::Vec3d col(u(rng), u(rng), u(rng));
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                const double a = alpha * std::exp(-r2 / (2.0 * sigma * sigma));
                cv::Vec3d& p = canvas.at<cv::Vec3d>(y, x);
                p = p * (1.0 - a) + col * a;
            }
        }
    }

    // glyph strokes
    static const char kGlyphs[] = "ABCDEFGHKMNPRSTXZ0123456789";
    const int glyphs = int(u(rng) * 3);
    for (int g = 0; g < glyphs; ++g) {
        const std::string text(1, kGlyphs[int(u(rng) * (sizeof(kGlyphs) - 1))]);
        const double scale = size / 40.0 * (0.8 + 0.8 * u(rng));
        const cv::Point org(int(u(rng) * size * 0.7), int(size * 0.3 + u(rng) * size * 0.6));
        const cv::Scalar col(u(rng), u(rng), u(rng));
        const int thickness = std::max(1, int(size / 32.0 * (1.0 + u(rng))));
        cv::putText(canvas, text, org, cv::FONT_HERSHEY_SIMPLEX, scale, col, thickness, cv::LINE_AA);
    }
    cv::GaussianBlur(canvas, canvas, cv::Size(0, 0), 0.6, 0.6, cv::BORDER_REFLECT);

    ImageTensor out(3, size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(c, y, x) = float(std::clamp(canvas.at<cv::Vec3d>(y, x)[c], 0.0, 1.0));
    return out;
}

std::vector<SceneGroup> procedural_corpus(int scenes, int per_scene, int size, std::uint64_t seed,
                                          int first_scene) {
    if (scenes < 0 || per_scene < 1) throw ValidationError("procedural_corpus: bad scene counts");
    std::vector<SceneGroup> out;
    out.reserve(std::size_t(scenes));
    for (int i = first_scene; i < first_scene + scenes; ++i) {
        Rng rng = make_stream(seed, "synth", std::uint64_t(i));
        const ImageTensor t = procedural_texture(size, rng);
        std::vector<ImageTensor> refl;
        for (int k = 0; k < per_scene; ++k) refl.push_back(procedural_texture(size, rng));
        char id[16];
        std::snprintf(id, sizeof id, "s%04d", i);
        out.push_back(generate_scene(t, refl, rng, id));
    }
    return out;
}

std::string to_json_line(const ManifestRecord& r) {
    json j;
    j["scene_id"] = r.scene_id;
    j["name"] = r.name;
    j["t_path"] = r.t_path;
    j["r_path"] = r.r_path;
    j["m_path"] = r.m_path;
    j["gamma1"] = r.gamma1;
    j["gamma2"] = r.gamma2;
    j["score"] = r.score;
    return j.dump();
}

ManifestRecord parse_manifest_line(const std::string& line) {
    ManifestRecord r;
    try {
        const json j = json::parse(line);
        r.scene_id = j.at("scene_id").get<std::string>();
        r.name = j.value("name", r.scene_id);
        r.t_path = j.at("t_path").get<std::string>();
        r.r_path = j.value("r_path", std::string());
        r.m_path = j.at("m_path").get<std::string>();
        r.gamma1 = j.value("gamma1", 0.0);
        r.gamma2 = j.value("gamma2", 0.0);
        r.score = j.value("score", 0.0);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("bad manifest line: ") + e.what());
    }
    return r;
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open manifest " + path.string());
    std::vector<ManifestRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) out.push_back(parse_manifest_line(line));
    }
    return out;
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestRecord> records) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& r : records) out << to_json_line(r) << '\n';
}

std::vector<ManifestRecord> filter_records(const std::vector<ManifestRecord>& records, double keep_fraction) {
    std::vector<double> scores;
    std::vector<std::string> ids;
    scores.reserve(records.size());
    ids.reserve(records.size());
    for (const auto& r : records) {
        scores.push_back(r.score);
        ids.push_back(r.scene_id);
    }
    std::vector<ManifestRecord> out;
    if (records.empty()) return out;
    for (std::size_t i : select_top_fraction(scores, ids, keep_fraction)) out.push_back(records[i]);
    return out;
}

std::vector<SceneGroup> load_scene_groups(const std::filesystem::path& manifest_path) {
    const auto base = manifest_path.parent_path();
    std::vector<SceneGroup> groups;
    std::map<std::string, std::size_t> where;
    for (const ManifestRecord& r : read_manifest(manifest_path)) {
        MixTriple t;
        t.scene_id = r.scene_id;
        t.name = r.name;
        t.transmission = io::read_image(base / r.t_path);
        if (!r.r_path.empty()) t.reflection = io::read_image(base / r.r_path);
        t.mixed = io::read_image(base / r.m_path);
        t.coeffs = {r.gamma1, r.gamma2};
        require_same_shape(t.transmission, t.mixed, "load_scene_groups");
        auto it = where.find(r.scene_id);
        if (it == where.end()) {
            where[r.scene_id] = groups.size();
            groups.push_back(SceneGroup{r.scene_id, {}});
            it = where.find(r.scene_id);
        }
        groups[it->second].triples.push_back(std::move(t));
    }
    return groups;
}

} // namespace dereflect::datagen
