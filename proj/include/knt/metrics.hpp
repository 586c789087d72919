#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "knt/feature_map.hpp"

namespace knt {

using PatientId = std::uint64_t;
using VectorView = std::span<const float>;

struct Similarity {
    double value = 0.0;
    bool degenerate = false;
};

/// dot(a,b)/(|a||b|); 0 with degenerate=true when either norm is zero.
Similarity cosine_checked(VectorView a, VectorView b);
double cosine(VectorView a, VectorView b);

/// Sample Pearson correlation; 0 with degenerate=true when either side is constant.
Similarity pearson_checked(std::span<const double> a, std::span<const double> b);
double pearson(std::span<const double> a, std::span<const double> b);

/// Mann-Whitney AUC: P(pos > neg) + 0.5 P(pos == neg), exact via midranks.
double auc_from_scores(std::span<const double> pos, std::span<const double> neg);

enum class SimilarityMode { flattened, pooled };

SimilarityMode parse_similarity_mode(const std::string& s);
std::string to_string(SimilarityMode m);

struct VerificationPair {
    double score = 0.0;
    bool same_patient = false;
};

struct PairSpec {
    std::size_t n_same = 500;
    std::size_t n_diff = 500;
    std::uint64_t seed = 0;
    SimilarityMode mode = SimilarityMode::pooled;
};

struct VerificationResult {
    double auc = 0.5;
    std::size_t n_same = 0;
    std::size_t n_diff = 0;
    std::size_t degenerate_pairs = 0;
};

/// Index pairs drawn without replacement. Same-patient pairs are sampled
/// uniformly from all within-patient pairs; counts are capped by availability.
struct SampledPairs {
    std::vector<std::pair<std::size_t, std::size_t>> same;
    std::vector<std::pair<std::size_t, std::size_t>> diff;
};
SampledPairs sample_pairs(std::span<const PatientId> patients, std::size_t n_same, std::size_t n_diff,
                          std::uint64_t seed);

/// Patient verification AUC from cosine similarity of sampled pairs.
/// Throws InvalidDataset when no patient has two samples.
VerificationResult verification_auc(std::span<const PatientId> patients, std::span<const FeatureMap> features,
                                    const PairSpec& spec);

/// Fraction of queries whose highest-cosine gallery entry (lowest index on
/// ties) carries the query's id. Gallery ids need not be unique.
double nearest_neighbor_accuracy(std::span<const VectorView> gallery, std::span<const PatientId> gallery_ids,
                                 std::span<const VectorView> queries, std::span<const PatientId> query_ids);

/// Top-1 re-identification against a one-entry-per-patient gallery.
/// Throws InvalidArgument on duplicate gallery ids, InvalidDataset when a query patient is absent.
double top1_retrieval(std::span<const VectorView> gallery, std::span<const PatientId> gallery_ids,
                      std::span<const VectorView> queries, std::span<const PatientId> query_ids);

/// Gallery = first sample of every patient with >= 2 samples, query = second.
struct GallerySplit {
    std::vector<std::size_t> gallery;
    std::vector<std::size_t> queries;
};
GallerySplit first_second_split(std::span<const PatientId> patients);

double top1_reidentification(std::span<const PatientId> patients, std::span<const FeatureMap> features,
                             SimilarityMode mode);

struct MacroAuc {
    double auc = 0.5;
    std::size_t labels_used = 0;
    std::size_t labels_skipped = 0;  // single-class labels in the evaluation set
};

/// Per-label binary AUC, macro-averaged. scores and labels are N x K row-major.
MacroAuc macro_auc(std::span<const double> scores, std::span<const std::uint8_t> labels, std::size_t num_labels);

struct MetricsReport {
    std::string experiment_id;
    std::string method;
    std::size_t d = 0;
    std::size_t layers = 0;
    std::string key_fingerprint;
    std::uint64_t key_seed = 0;
    double verification_auc = 0.5;
    std::size_t n_pairs = 0;
    double top1 = 0.0;
    std::size_t n_queries = 0;
    std::optional<double> classification_auc;
    std::vector<std::string> flags;
};

}  // namespace knt
