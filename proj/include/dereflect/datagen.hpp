#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dereflect/rng.hpp"
#include "dereflect/tensor.hpp"

namespace dereflect::datagen {

struct MixCoefficients {
    double gamma1 = 1.0;
    double gamma2 = 0.4;
};

// Sampling ranges for the mixing coefficients. The defaults are the full
// admissible ranges; narrower ranges must lie inside them.
struct CoefficientRanges {
    double gamma1_min = 0.8;
    double gamma1_max = 1.0;
    double gamma2_min = 0.4;
    double gamma2_max = 1.0;

    void validate() const;
};

void validate(const MixCoefficients& c);

struct MixTriple {
    std::string scene_id;
    std::string name; // unique per triple, used as file stem and scorer key
    ImageTensor transmission;
    ImageTensor reflection;
    ImageTensor mixed;
    MixCoefficients coeffs;
};

struct SceneGroup {
    std::string scene_id;
    std::vector<MixTriple> triples;

    const ImageTensor& transmission() const { return triples.front().transmission; }
    std::size_t size() const { return triples.size(); }
};

// M = g1*T + g2*R - g1*g2*(T o R), clamped to [0,1].
ImageTensor mix(const ImageTensor& transmission, const ImageTensor& reflection, const MixCoefficients& coeffs);

// Pre-clamp value of the mixing model for one pixel value pair.
inline double mix_value(double t, double r, const MixCoefficients& c) {
    return c.gamma1 * t + c.gamma2 * r - c.gamma1 * c.gamma2 * t * r;
}

MixCoefficients sample_coefficients(Rng& rng, const CoefficientRanges& ranges = {});

// One triple per reflection, each with its own coefficient draw.
SceneGroup generate_scene(const ImageTensor& transmission, std::span<const ImageTensor> reflections, Rng& rng,
                          const std::string& scene_id, const CoefficientRanges& ranges = {});

// Largest deviation between the stored mixed image and the mixing model
// re-evaluated from the triple's own layers and coefficients.
double formula_residual(const MixTriple& t);

class RealismScorer {
public:
    virtual ~RealismScorer() = default;
    virtual double score(const MixTriple& triple) const = 0;
    virtual std::string name() const = 0;
};

// Rewards mid-band contrast of the residual M - g1*T (visible reflection
// structure) and penalises the fraction of clipped highlights in M.
class HeuristicRealismScorer final : public RealismScorer {
public:
    struct Weights {
        double clip_penalty = 1.0;
        double clip_level = 0.98;
        double fine_sigma = 1.0;
        double coarse_sigma = 4.0;
    };

    HeuristicRealismScorer() = default;
    explicit HeuristicRealismScorer(Weights w) : w_(w) {}

    double score(const MixTriple& triple) const override;
    std::string name() const override { return "heuristic"; }

private:
    Weights w_{};
};

// Cosine similarity between an image embedding of M and a fixed prompt
// embedding ("image with glass reflection"). The embedder is supplied by
// the caller; no model ships with the toolkit.
class EmbeddingRealismScorer final : public RealismScorer {
public:
    using Embedder = std::function<std::vector<float>(const MixTriple&)>;

    EmbeddingRealismScorer(Embedder embedder, std::vector<float> prompt_embedding);

    double score(const MixTriple& triple) const override;
    std::string name() const override { return "embedding"; }

private:
    Embedder embedder_;
    std::vector<float> prompt_;
};

// Loads `prompt_embedding.json` (array) and `image_embeddings.jsonl`
// ({"name": ..., "embedding": [...]}) from a cache directory.
std::unique_ptr<EmbeddingRealismScorer> load_embedding_scorer(const std::filesystem::path& cache_dir);

// Retention fraction of the reference filtering run (20,833 of 69,443 pairs).
inline constexpr double kReferenceKeepFraction = 20833.0 / 69443.0;

// ceil(keep_fraction * n), with products within 1e-9 of an integer
// treated as that integer.
std::size_t keep_count(double keep_fraction, std::size_t n);

// Indices ordered by (score desc, scene_id asc, index asc).
std::vector<std::size_t> rank_by_score(std::span<const double> scores, std::span<const std::string> scene_ids);

// Indices of the retained items, in ranked order.
std::vector<std::size_t> select_top_fraction(std::span<const double> scores, std::span<const std::string> scene_ids,
                                             double keep_fraction);

std::vector<MixTriple> filter_by_realism(const std::vector<MixTriple>& triples, const RealismScorer& scorer,
                                         double keep_fraction);

// Absolute-threshold variant: keeps score >= min_score, ranked.
std::vector<MixTriple> filter_by_threshold(const std::vector<MixTriple>& triples, const RealismScorer& scorer,
                                           double min_score);

// Procedural texture: gradient background, gaussian blobs and glyph strokes.
ImageTensor procedural_texture(int size, Rng& rng);

// Scenes "s0000", "s0001", ... with procedural transmission and reflection
// layers; scene i draws from its own stream of `seed`.
std::vector<SceneGroup> procedural_corpus(int scenes, int per_scene, int size, std::uint64_t seed,
                                          int first_scene = 0);

struct ManifestRecord {
    std::string scene_id;
    std::string name;
    std::string t_path;
    std::string r_path;
    std::string m_path;
    double gamma1 = 0.0;
    double gamma2 = 0.0;
    double score = 0.0;
};

std::string to_json_line(const ManifestRecord& r);
ManifestRecord parse_manifest_line(const std::string& line);
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestRecord> records);

// Filters manifest records by their stored score.
std::vector<ManifestRecord> filter_records(const std::vector<ManifestRecord>& records, double keep_fraction);

// Loads every triple of a manifest (paths relative to the manifest's
// directory) and groups them by scene_id, preserving first-seen order.
std::vector<SceneGroup> load_scene_groups(const std::filesystem::path& manifest_path);

} // namespace dereflect::datagen
