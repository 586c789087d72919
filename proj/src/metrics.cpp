#include "knt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <unordered_set>

#include "knt/errors.hpp"
#include "knt/keying.hpp"
#include "knt/probe.hpp"

namespace knt {

Similarity cosine_checked(VectorView a, VectorView b) {
    if (a.size() != b.size()) {
        throw InvalidArgument("cosine: length mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a[i], y = b[i];
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if (na == 0.0 || nb == 0.0) return {0.0, true};
    const double c = dot / (std::sqrt(na) * std::sqrt(nb));
    return {std::clamp(c, -1.0, 1.0), false};
}

double cosine(VectorView a, VectorView b) { return cosine_checked(a, b).value; }

Similarity pearson_checked(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw InvalidArgument("pearson: length mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
    if (a.size() < 2) throw InvalidArgument("pearson: need at least 2 values");
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) return {0.0, true};
    // sqrt(saa * sbb) rather than sqrt(saa) * sqrt(sbb): identical inputs give exactly 1.
    return {std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0), false};
}

double pearson(std::span<const double> a, std::span<const double> b) { return pearson_checked(a, b).value; }

double auc_from_scores(std::span<const double> pos, std::span<const double> neg) {
    if (pos.empty() || neg.empty()) throw InvalidArgument("auc_from_scores: both score lists must be non-empty");
    struct Entry {
        double score;
        bool positive;
    };
    std::vector<Entry> all;
    all.reserve(pos.size() + neg.size());
    for (double s : pos) all.push_back({s, true});
    for (double s : neg) all.push_back({s, false});
    std::sort(all.begin(), all.end(), [](const Entry& x, const Entry& y) { return x.score < y.score; });

    // Count (pos > neg) pairs plus half of ties, walking tie groups in ascending order.
    double wins = 0.0;
    std::size_t neg_below = 0;
    for (std::size_t i = 0; i < all.size();) {
        std::size_t j = i;
        std::size_t pos_in_group = 0, neg_in_group = 0;
        while (j < all.size() && all[j].score == all[i].score) {
            (all[j].positive ? pos_in_group : neg_in_group) += 1;
            ++j;
        }
        wins += static_cast<double>(pos_in_group) * static_cast<double>(neg_below) +
                0.5 * static_cast<double>(pos_in_group) * static_cast<double>(neg_in_group);
        neg_below += neg_in_group;
        i = j;
    }
    return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

SimilarityMode parse_similarity_mode(const std::string& s) {
    if (s == "flattened") return SimilarityMode::flattened;
    if (s == "pooled") return SimilarityMode::pooled;
    throw InvalidArgument("similarity mode must be 'flattened' or 'pooled', got '" + s + "'");
}

std::string to_string(SimilarityMode m) { return m == SimilarityMode::flattened ? "flattened" : "pooled"; }

SampledPairs sample_pairs(std::span<const PatientId> patients, std::size_t n_same, std::size_t n_diff,
                          std::uint64_t seed) {
    std::map<PatientId, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < patients.size(); ++i) groups[patients[i]].push_back(i);

    std::vector<std::pair<std::size_t, std::size_t>> same_pool;
    for (const auto& [pid, idx] : groups) {
        for (std::size_t a = 0; a < idx.size(); ++a) {
            for (std::size_t b = a + 1; b < idx.size(); ++b) same_pool.emplace_back(idx[a], idx[b]);
        }
    }
    if (same_pool.empty()) throw InvalidDataset("verification: no patient has two or more samples");

    SampledPairs out;
    {
        UniformStream rng(combine_seeds(seed, {0x73616d65ULL}));
        const std::size_t m = std::min(n_same, same_pool.size());
        for (std::size_t i = 0; i < m; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.next() % (same_pool.size() - i));
            std::swap(same_pool[i], same_pool[j]);
        }
        out.same.assign(same_pool.begin(), same_pool.begin() + static_cast<std::ptrdiff_t>(m));
    }

    const std::size_t n = patients.size();
    const std::size_t total_pairs = n * (n - 1) / 2;
    const std::size_t diff_total = total_pairs - same_pool.size();
    if (diff_total == 0 || n_diff == 0) return out;
    if (n_diff >= diff_total) {
        for (std::size_t a = 0; a < n; ++a) {
            for (std::size_t b = a + 1; b < n; ++b) {
                if (patients[a] != patients[b]) out.diff.emplace_back(a, b);
            }
        }
        return out;
    }
    UniformStream rng(combine_seeds(seed, {0x64696666ULL}));
    std::set<std::pair<std::size_t, std::size_t>> seen;
    while (out.diff.size() < n_diff) {
        std::size_t a = static_cast<std::size_t>(rng.next() % n);
        std::size_t b = static_cast<std::size_t>(rng.next() % n);
        if (a == b || patients[a] == patients[b]) continue;
        if (a > b) std::swap(a, b);
        if (seen.insert({a, b}).second) out.diff.emplace_back(a, b);
    }
    return out;
}

namespace {

std::vector<std::vector<float>> pooled_vectors(std::span<const FeatureMap> features) {
    std::vector<std::vector<float>> pooled(features.size());
    for (std::size_t i = 0; i < features.size(); ++i) pooled[i] = gap(features[i]);
    return pooled;
}

std::vector<VectorView> views_for(std::span<const FeatureMap> features, SimilarityMode mode,
                                  std::vector<std::vector<float>>& storage) {
    std::vector<VectorView> views(features.size());
    if (mode == SimilarityMode::pooled) {
        storage = pooled_vectors(features);
        for (std::size_t i = 0; i < features.size(); ++i) views[i] = storage[i];
    } else {
        for (std::size_t i = 0; i < features.size(); ++i) views[i] = features[i].values();
    }
    return views;
}

}  // namespace

VerificationResult verification_auc(std::span<const PatientId> patients, std::span<const FeatureMap> features,
                                    const PairSpec& spec) {
    if (patients.size() != features.size()) {
        throw InvalidArgument("verification_auc: patient ids and features differ in length");
    }
    const SampledPairs pairs = sample_pairs(patients, spec.n_same, spec.n_diff, spec.seed);
    if (pairs.diff.empty()) throw InvalidDataset("verification: dataset has a single patient");

    std::vector<std::vector<float>> storage;
    const auto views = views_for(features, spec.mode, storage);

    auto score_all = [&](const std::vector<std::pair<std::size_t, std::size_t>>& list, std::vector<double>& scores,
                         std::size_t& degenerate) {
        scores.resize(list.size());
        std::vector<std::uint8_t> flags(list.size(), 0);
        const auto n = static_cast<std::ptrdiff_t>(list.size());
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t k = 0; k < n; ++k) {
            const auto [a, b] = list[static_cast<std::size_t>(k)];
            const Similarity s = cosine_checked(views[a], views[b]);
            scores[static_cast<std::size_t>(k)] = s.value;
            flags[static_cast<std::size_t>(k)] = s.degenerate ? 1 : 0;
        }
        degenerate += static_cast<std::size_t>(std::count(flags.begin(), flags.end(), 1));
    };

    VerificationResult result;
    std::vector<double> pos, neg;
    score_all(pairs.same, pos, result.degenerate_pairs);
    score_all(pairs.diff, neg, result.degenerate_pairs);
    result.auc = auc_from_scores(pos, neg);
    result.n_same = pos.size();
    result.n_diff = neg.size();
    return result;
}

namespace {

// Sum of squares in index order; float products are exact in double, so this
// matches the accumulation inside cosine_checked bit for bit.
double sum_squares(VectorView a) {
    double s = 0.0;
    for (float x : a) s += static_cast<double>(x) * x;
    return s;
}

// cosine_checked from precomputed norms, same rounding sequence.
double cosine_from(double dot, double na, double nb) {
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

}  // namespace

double nearest_neighbor_accuracy(std::span<const VectorView> gallery, std::span<const PatientId> gallery_ids,
                                 std::span<const VectorView> queries, std::span<const PatientId> query_ids) {
    if (gallery.size() != gallery_ids.size() || queries.size() != query_ids.size()) {
        throw InvalidArgument("retrieval: vectors and ids differ in length");
    }
    if (gallery.empty() || queries.empty()) throw InvalidArgument("retrieval: empty gallery or query set");
    const std::size_t dim = gallery.front().size();
    for (const auto& v : gallery) {
        if (v.size() != dim) throw InvalidArgument("retrieval: gallery vectors differ in length");
    }
    for (const auto& v : queries) {
        if (v.size() != dim) throw InvalidArgument("retrieval: query length differs from gallery");
    }

    std::vector<double> gnorm(gallery.size());
    for (std::size_t g = 0; g < gallery.size(); ++g) gnorm[g] = sum_squares(gallery[g]);

    // Eight independent dot-product chains per pass; each chain keeps index order.
    constexpr std::size_t kBlock = 8;
    std::vector<std::uint8_t> hit(queries.size(), 0);
    const auto nq = static_cast<std::ptrdiff_t>(queries.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t q = 0; q < nq; ++q) {
        const VectorView qv = queries[static_cast<std::size_t>(q)];
        const double qn = sum_squares(qv);
        std::size_t best = 0;
        double best_score = -2.0;
        for (std::size_t g0 = 0; g0 < gallery.size(); g0 += kBlock) {
            const std::size_t nb = std::min(kBlock, gallery.size() - g0);
            double dot[kBlock] = {};
            if (nb == kBlock) {
                const float* p[kBlock];
                for (std::size_t b = 0; b < kBlock; ++b) p[b] = gallery[g0 + b].data();
                for (std::size_t i = 0; i < dim; ++i) {
                    const double x = qv[i];
                    for (std::size_t b = 0; b < kBlock; ++b) dot[b] += x * p[b][i];
                }
            } else {
                for (std::size_t b = 0; b < nb; ++b) {
                    const float* pb = gallery[g0 + b].data();
                    for (std::size_t i = 0; i < dim; ++i) dot[b] += static_cast<double>(qv[i]) * pb[i];
                }
            }
            for (std::size_t b = 0; b < nb; ++b) {
                const double sc = cosine_from(dot[b], qn, gnorm[g0 + b]);
                if (sc > best_score) {
                    best_score = sc;
                    best = g0 + b;
                }
            }
        }
        hit[static_cast<std::size_t>(q)] = gallery_ids[best] == query_ids[static_cast<std::size_t>(q)] ? 1 : 0;
    }
    const auto hits = std::count(hit.begin(), hit.end(), 1);
    return static_cast<double>(hits) / static_cast<double>(queries.size());
}

double top1_retrieval(std::span<const VectorView> gallery, std::span<const PatientId> gallery_ids,
                      std::span<const VectorView> queries, std::span<const PatientId> query_ids) {
    std::unordered_set<PatientId> ids;
    for (PatientId id : gallery_ids) {
        if (!ids.insert(id).second) throw InvalidArgument("top1_retrieval: duplicate gallery patient id");
    }
    for (PatientId id : query_ids) {
        if (!ids.contains(id)) {
            throw InvalidDataset("top1_retrieval: query patient " + std::to_string(id) + " absent from gallery");
        }
    }
    return nearest_neighbor_accuracy(gallery, gallery_ids, queries, query_ids);
}

GallerySplit first_second_split(std::span<const PatientId> patients) {
    std::map<PatientId, std::vector<std::size_t>> groups;
    std::vector<PatientId> order;
    for (std::size_t i = 0; i < patients.size(); ++i) {
        auto& g = groups[patients[i]];
        if (g.empty()) order.push_back(patients[i]);
        g.push_back(i);
    }
    GallerySplit split;
    for (PatientId pid : order) {
        const auto& g = groups[pid];
        if (g.size() < 2) continue;
        split.gallery.push_back(g[0]);
        split.queries.push_back(g[1]);
    }
    return split;
}

double top1_reidentification(std::span<const PatientId> patients, std::span<const FeatureMap> features,
                             SimilarityMode mode) {
    if (patients.size() != features.size()) {
        throw InvalidArgument("top1_reidentification: patient ids and features differ in length");
    }
    const GallerySplit split = first_second_split(patients);
    if (split.gallery.empty()) throw InvalidDataset("top1: no patient has two or more samples");
    std::vector<std::vector<float>> storage;
    const auto views = views_for(features, mode, storage);
    std::vector<VectorView> gallery, queries;
    std::vector<PatientId> gid, qid;
    for (std::size_t k = 0; k < split.gallery.size(); ++k) {
        gallery.push_back(views[split.gallery[k]]);
        gid.push_back(patients[split.gallery[k]]);
        queries.push_back(views[split.queries[k]]);
        qid.push_back(patients[split.queries[k]]);
    }
    return top1_retrieval(gallery, gid, queries, qid);
}

MacroAuc macro_auc(std::span<const double> scores, std::span<const std::uint8_t> labels, std::size_t num_labels) {
    if (num_labels == 0 || scores.size() != labels.size() || scores.size() % num_labels != 0) {
        throw InvalidArgument("macro_auc: scores/labels shape mismatch");
    }
    if (scores.empty()) throw InvalidArgument("macro_auc: empty evaluation set");
    const std::size_t n = scores.size() / num_labels;
    MacroAuc out;
    double sum = 0.0;
    for (std::size_t k = 0; k < num_labels; ++k) {
        std::vector<double> pos, neg;
        for (std::size_t i = 0; i < n; ++i) {
            (labels[i * num_labels + k] ? pos : neg).push_back(scores[i * num_labels + k]);
        }
        if (pos.empty() || neg.empty()) {
            ++out.labels_skipped;
            continue;
        }
        sum += auc_from_scores(pos, neg);
        ++out.labels_used;
    }
    if (out.labels_used > 0) out.auc = sum / static_cast<double>(out.labels_used);
    return out;
}

}  // namespace knt
