#include "knt/io_store.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_set>

#include "knt/errors.hpp"

namespace knt {

namespace {

constexpr char kMagic[4] = {'K', 'N', 'T', 'F'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint16_t kDtypeF32 = 0;

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i)));
}

template <typename T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(bytes[offset + i]) << (8 * i);
    return static_cast<T>(v);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + "\"";
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(std::span<const std::uint64_t> dims, std::span<const float> values) {
    std::uint64_t count = 1;
    for (std::uint64_t d : dims) count *= d;
    if (count != values.size()) {
        throw InvalidArgument("write_tensor: dims describe " + std::to_string(count) + " values, got " +
                              std::to_string(values.size()));
    }
    std::vector<std::uint8_t> out;
    out.reserve(12 + 8 * dims.size() + 4 * values.size());
    out.insert(out.end(), kMagic, kMagic + 4);
    put_le<std::uint16_t>(out, kVersion);
    put_le<std::uint16_t>(out, kDtypeF32);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dims.size()));
    for (std::uint64_t d : dims) put_le<std::uint64_t>(out, d);
    for (float v : values) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("KNTF: bad magic", 0);
    if (bytes.size() < 12) throw FormatError("KNTF: truncated header", bytes.size());
    const auto version = get_le<std::uint16_t>(bytes, 4);
    if (version != kVersion) throw FormatError("KNTF: unsupported version " + std::to_string(version), 4);
    const auto dtype = get_le<std::uint16_t>(bytes, 6);
    if (dtype != kDtypeF32) throw FormatError("KNTF: unsupported dtype code " + std::to_string(dtype), 6);
    const auto ndim = get_le<std::uint32_t>(bytes, 8);
    std::size_t offset = 12;
    if (bytes.size() < offset + 8ULL * ndim) throw FormatError("KNTF: truncated dims", bytes.size());
    Tensor t;
    t.dims.resize(ndim);
    std::uint64_t count = 1;
    for (auto& d : t.dims) {
        d = get_le<std::uint64_t>(bytes, offset);
        offset += 8;
        if (d != 0 && count > (std::uint64_t{1} << 62) / d) throw FormatError("KNTF: dims overflow", offset - 8);
        count *= d;
    }
    const std::uint64_t payload = 4 * count;
    if (bytes.size() - offset < payload) {
        throw FormatError("KNTF: truncated payload, expected " + std::to_string(payload) + " bytes", bytes.size());
    }
    if (bytes.size() - offset > payload) throw FormatError("KNTF: trailing bytes after payload", offset + payload);
    t.values.resize(count);
    for (auto& v : t.values) {
        v = std::bit_cast<float>(get_le<std::uint32_t>(bytes, offset));
        offset += 4;
    }
    return t;
}

void write_tensor(const std::filesystem::path& path, std::span<const std::uint64_t> dims, std::span<const float> values) {
    write_file(path, encode_tensor(dims, values));
}

Tensor read_tensor(const std::filesystem::path& path) { return decode_tensor(read_file(path)); }

std::filesystem::path write_dataset(const std::filesystem::path& dir, const std::string& stem, const Dataset& data) {
    data.validate();
    if (data.size() == 0) throw InvalidArgument("write_dataset: empty dataset");
    const FeatureMap& first = data.features.front();
    std::vector<float> values;
    values.reserve(data.size() * first.size());
    for (const auto& f : data.features) values.insert(values.end(), f.values().begin(), f.values().end());
    const std::uint64_t dims[] = {data.size(), first.height(), first.width(), first.channels()};
    const auto tensor_name = stem + ".kntf";
    write_tensor(dir / tensor_name, dims, values);

    ordered_json manifest;
    manifest["format"] = "knt-manifest";
    manifest["version"] = 1;
    manifest["tensor"] = tensor_name;
    manifest["axes"] = {"N", "H", "W", "C"};
    manifest["num_labels"] = data.num_labels;
    auto& records = manifest["samples"] = ordered_json::array();
    for (std::size_t i = 0; i < data.size(); ++i) {
        ordered_json rec;
        rec["sample_id"] = data.sample_ids[i];
        rec["patient_id"] = data.patient_ids[i];
        rec["labels"] = data.labels[i];
        rec["split"] = to_string(data.splits[i]);
        records.push_back(std::move(rec));
    }
    const auto manifest_path = dir / (stem + ".json");
    std::ofstream out(manifest_path);
    if (!out) throw IoError("cannot write " + manifest_path.string());
    out << manifest.dump(2) << '\n';
    return manifest_path;
}

Dataset read_dataset(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open manifest " + manifest_path.string());
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidDataset("manifest " + manifest_path.string() + ": " + e.what());
    }
    try {
        const auto tensor_path = manifest_path.parent_path() / manifest.at("tensor").get<std::string>();
        const auto axes = manifest.value("axes", std::vector<std::string>{"N", "H", "W", "C"});
        if (axes != std::vector<std::string>{"N", "H", "W", "C"}) throw InvalidDataset("manifest: axes must be [N,H,W,C]");
        Tensor t = read_tensor(tensor_path);
        if (t.dims.size() != 4) throw InvalidDataset("manifest: tensor must be 4-D [N,H,W,C]");
        const auto& records = manifest.at("samples");
        if (records.size() != t.dims[0]) {
            throw InvalidDataset("manifest lists " + std::to_string(records.size()) + " samples but tensor has N=" +
                                 std::to_string(t.dims[0]));
        }
        Dataset data;
        data.num_labels = manifest.value("num_labels", std::size_t{0});
        const std::size_t h = t.dims[1], w = t.dims[2], c = t.dims[3];
        const std::size_t per = h * w * c;
        for (std::size_t i = 0; i < records.size(); ++i) {
            const auto& r = records[i];
            data.sample_ids.push_back(r.at("sample_id").get<std::uint64_t>());
            data.patient_ids.push_back(r.at("patient_id").get<PatientId>());
            data.labels.push_back(r.value("labels", std::vector<std::uint8_t>{}));
            data.splits.push_back(parse_split(r.value("split", std::string("unassigned"))));
            std::vector<float> v(t.values.begin() + static_cast<std::ptrdiff_t>(i * per),
                                 t.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
            data.features.emplace_back(h, w, c, std::move(v));
        }
        if (data.num_labels == 0 && !data.labels.empty()) data.num_labels = data.labels.front().size();
        data.validate();
        return data;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidDataset("manifest " + manifest_path.string() + ": " + e.what());
    }
}

void write_probe(const std::filesystem::path& dir, const std::string& stem, const LinearProbe& probe) {
    std::vector<float> packed;
    packed.reserve(probe.num_labels * (probe.input_dim + 1));
    for (std::size_t k = 0; k < probe.num_labels; ++k) {
        const auto* w = probe.weights.data() + k * probe.input_dim;
        packed.insert(packed.end(), w, w + probe.input_dim);
        packed.push_back(probe.bias[k]);
    }
    const std::uint64_t dims[] = {probe.num_labels, probe.input_dim + 1};
    write_tensor(dir / (stem + ".kntf"), dims, packed);
    ordered_json header;
    header["format"] = "knt-probe";
    header["version"] = 1;
    header["tensor"] = stem + ".kntf";
    header["layout"] = "rows = labels, columns = weights then bias";
    header["num_labels"] = probe.num_labels;
    header["input_dim"] = probe.input_dim;
    header["pooled"] = probe.pooled;
    header["height"] = probe.height;
    header["width"] = probe.width;
    header["channels"] = probe.channels;
    header["flags"] = probe.flags;
    std::ofstream out(dir / (stem + ".json"));
    out << header.dump(2) << '\n';
}

LinearProbe read_probe(const std::filesystem::path& header_path) {
    std::ifstream in(header_path);
    if (!in) throw IoError("cannot open " + header_path.string());
    nlohmann::json header;
    in >> header;
    LinearProbe p;
    p.num_labels = header.at("num_labels").get<std::size_t>();
    p.input_dim = header.at("input_dim").get<std::size_t>();
    p.pooled = header.at("pooled").get<bool>();
    p.height = header.value("height", std::size_t{0});
    p.width = header.value("width", std::size_t{0});
    p.channels = header.value("channels", std::size_t{0});
    p.flags = header.value("flags", std::vector<std::string>{});
    const Tensor t = read_tensor(header_path.parent_path() / header.at("tensor").get<std::string>());
    if (t.dims.size() != 2 || t.dims[0] != p.num_labels || t.dims[1] != p.input_dim + 1) {
        throw InvalidDataset("probe tensor shape does not match header");
    }
    for (std::size_t k = 0; k < p.num_labels; ++k) {
        const auto* row = t.values.data() + k * (p.input_dim + 1);
        p.weights.insert(p.weights.end(), row, row + p.input_dim);
        p.bias.push_back(row[p.input_dim]);
    }
    return p;
}

std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

ordered_json to_json(const MetricsReport& r) {
    ordered_json j;
    j["experiment_id"] = r.experiment_id;
    j["method"] = r.method;
    j["d"] = r.d;
    j["L"] = r.layers;
    j["key_fingerprint"] = r.key_fingerprint;
    j["key_seed"] = r.key_seed;
    j["verif_auc"] = r.verification_auc;
    j["n_pairs"] = r.n_pairs;
    j["top1"] = r.top1;
    j["n_queries"] = r.n_queries;
    j["cls_auc"] = r.classification_auc ? ordered_json(*r.classification_auc) : ordered_json(nullptr);
    j["flags"] = r.flags;
    return j;
}

ordered_json to_json(const AttackReport& r) {
    ordered_json j;
    j["experiment_id"] = r.experiment_id;
    j["attack"] = r.attack_kind;
    j["d"] = r.d;
    j["L"] = r.layers;
    j["mean_cosine"] = r.mean_cosine;
    j["std_cosine"] = r.std_cosine;
    j["top1_mean"] = r.top1_mean;
    j["top1_std"] = r.top1_std;
    j["ms_per_sample"] = r.ms_per_sample;
    auto& rows = j["per_seed"] = ordered_json::array();
    for (const auto& s : r.per_seed) {
        ordered_json row;
        row["key_seed"] = s.key_seed;
        row["key_fingerprint"] = s.key_fingerprint;
        row["mean_cosine"] = s.eval.mean_cosine;
        row["std_cosine"] = s.eval.std_cosine;
        row["top1"] = s.eval.top1;
        row["samples"] = s.eval.samples;
        row["ms_per_sample"] = s.ms_per_sample;
        rows.push_back(std::move(row));
    }
    j["flags"] = r.flags;
    return j;
}

std::vector<std::string> metrics_csv_columns() {
    return {"experiment_id", "method", "d", "L", "key_seed", "verif_auc", "top1", "cls_auc"};
}

std::vector<std::string> metrics_csv_row(const MetricsReport& r) {
    return {r.experiment_id,
            r.method,
            std::to_string(r.d),
            std::to_string(r.layers),
            std::to_string(r.key_seed),
            format_double(r.verification_auc),
            format_double(r.top1),
            r.classification_auc ? format_double(*r.classification_auc) : std::string()};
}

std::vector<std::string> attack_csv_columns() {
    return {"experiment_id", "attack", "d", "L", "key_seed", "mean_cosine", "std_cosine", "top1", "ms_per_sample"};
}

std::vector<std::string> attack_csv_rows_flat(const AttackReport& r, std::size_t seed_index) {
    const AttackSeedRow& s = r.per_seed.at(seed_index);
    return {r.experiment_id,
            r.attack_kind,
            std::to_string(r.d),
            std::to_string(r.layers),
            std::to_string(s.key_seed),
            format_double(s.eval.mean_cosine),
            format_double(s.eval.std_cosine),
            format_double(s.eval.top1),
            format_double(s.ms_per_sample)};
}

void append_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                const std::vector<std::vector<std::string>>& rows) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    std::ofstream out(path, std::ios::app);
    if (!out) throw IoError("cannot append to " + path.string());
    auto emit = [&](const std::vector<std::string>& row) {
        for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << csv_escape(row[i]);
        out << '\n';
    };
    if (fresh) emit(header);
    for (const auto& row : rows) {
        if (row.size() != header.size()) throw InvalidArgument("append_csv: row width differs from header");
        emit(row);
    }
}

namespace {

void write_json(const std::filesystem::path& path, const ordered_json& doc) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << doc.dump(2) << '\n';
}

}  // namespace

void write_report(const std::filesystem::path& json_path, const std::filesystem::path& csv_path,
                  std::span<const MetricsReport> reports, const ordered_json& provenance,
                  const ordered_json& summary) {
    ordered_json doc;
    doc["kind"] = "metrics";
    doc["provenance"] = provenance;
    auto& arr = doc["results"] = ordered_json::array();
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : reports) {
        arr.push_back(to_json(r));
        rows.push_back(metrics_csv_row(r));
    }
    if (!summary.is_null()) doc["summary"] = summary;
    write_json(json_path, doc);
    append_csv(csv_path, metrics_csv_columns(), rows);
}

void write_report(const std::filesystem::path& json_path, const std::filesystem::path& csv_path,
                  const AttackReport& report, const ordered_json& provenance) {
    ordered_json doc;
    doc["kind"] = "attack";
    doc["provenance"] = provenance;
    doc["results"] = ordered_json::array({to_json(report)});
    write_json(json_path, doc);
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < report.per_seed.size(); ++i) rows.push_back(attack_csv_rows_flat(report, i));
    append_csv(csv_path, attack_csv_columns(), rows);
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string file_digest(const std::filesystem::path& path) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(read_file(path));
    return os.str();
}

}  // namespace knt
