#include <doctest.h>

#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "knt/errors.hpp"
#include "knt/io_store.hpp"
#include "oracle_goldens.hpp"

using namespace knt;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("knt_io_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("KNTF encoding goldens") {
    const std::vector<std::uint64_t> dims{2, 2};
    const std::vector<float> vals{1.0f, -2.5f, 0.0f, 3.25f};
    CHECK(encode_tensor(dims, vals) == testutil::from_hex(golden::kKntf2x2Hex));
    const std::vector<float> scalar{7.5f};
    CHECK(encode_tensor(std::vector<std::uint64_t>{}, scalar) == testutil::from_hex(golden::kKntfScalarHex));
    const auto t = decode_tensor(testutil::from_hex(golden::kKntf2x2Hex));
    CHECK(t.dims == dims);
    CHECK(t.values == vals);
    CHECK_THROWS_AS(encode_tensor(dims, scalar), InvalidArgument);
}

TEST_CASE("KNTF rejects malformed input with the byte offset") {
    const auto good = testutil::from_hex(golden::kKntf2x2Hex);
    auto expect_offset = [](std::vector<std::uint8_t> bytes, std::size_t offset) {
        try {
            decode_tensor(bytes);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.offset() == offset);
        }
    };
    auto bad_magic = good;
    bad_magic[0] = 'X';
    expect_offset(bad_magic, 0);
    auto bad_version = good;
    bad_version[4] = 2;
    expect_offset(bad_version, 4);
    auto bad_dtype = good;
    bad_dtype[6] = 1;
    expect_offset(bad_dtype, 6);
    CHECK_THROWS_AS(decode_tensor(std::vector<std::uint8_t>(good.begin(), good.begin() + 10)), FormatError);
    CHECK_THROWS_AS(decode_tensor(std::vector<std::uint8_t>(good.begin(), good.end() - 1)), FormatError);
    auto trailing = good;
    trailing.push_back(0);
    CHECK_THROWS_AS(decode_tensor(trailing), FormatError);
}

TEST_CASE("tensor file round trip") {
    const auto dir = scratch("tensor");
    const auto f = testutil::random_map(4, 3, 5, 7);
    const std::vector<std::uint64_t> dims{3, 5, 7};
    write_tensor(dir / "t.kntf", dims, f.values());
    const auto t = read_tensor(dir / "t.kntf");
    CHECK(t.dims == dims);
    CHECK(std::equal(t.values.begin(), t.values.end(), f.values().begin()));
    CHECK_THROWS_AS(read_tensor(dir / "missing.kntf"), IoError);
}

TEST_CASE("dataset round trip through manifest and tensor") {
    const auto dir = scratch("dataset");
    SynthConfig cfg;
    cfg.num_patients = 5;
    cfg.channels = 4;
    auto d = generate(cfg);
    d.splits[0] = d.splits[1] = d.splits[2] = Split::train;
    const auto manifest = write_dataset(dir, "ds", d);
    CHECK(fs::exists(dir / "ds.kntf"));
    const auto r = read_dataset(manifest);
    CHECK(r.features == d.features);
    CHECK(r.sample_ids == d.sample_ids);
    CHECK(r.patient_ids == d.patient_ids);
    CHECK(r.labels == d.labels);
    CHECK(r.splits == d.splits);
    CHECK(r.num_labels == d.num_labels);

    auto doc = nlohmann::json::parse(slurp(manifest));
    doc["samples"].erase(doc["samples"].size() - 1);
    std::ofstream(manifest) << doc.dump();
    CHECK_THROWS_AS(read_dataset(manifest), InvalidDataset);
}

TEST_CASE("probe round trip") {
    const auto dir = scratch("probe");
    LinearProbe p;
    p.num_labels = 2;
    p.input_dim = 3;
    p.pooled = false;
    p.height = 1;
    p.width = 3;
    p.channels = 1;
    p.weights = {1, 2, 3, 4, 5, 6};
    p.bias = {-1, 0.5f};
    write_probe(dir, "p", p);
    const auto q = read_probe(dir / "p.json");
    CHECK(q.weights == p.weights);
    CHECK(q.bias == p.bias);
    CHECK(q.pooled == false);
    CHECK(q.width == 3);
}

TEST_CASE("FNV-1a reference values") {
    CHECK(fnv1a64(std::vector<std::uint8_t>{}) == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64(std::vector<std::uint8_t>{'a'}) == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("reports: JSON fields, CSV header once, no key material") {
    const auto dir = scratch("report");
    MetricsReport m;
    m.experiment_id = "x";
    m.method = "knt";
    m.d = 64;
    m.layers = 2;
    m.key_fingerprint = "abcd1234";
    m.verification_auc = 0.6;
    m.classification_auc = 0.85;
    const auto j = to_json(m);
    CHECK(j["method"] == "knt");
    CHECK(j["key_fingerprint"] == "abcd1234");
    std::vector<MetricsReport> rs{m, m};
    ordered_json prov = {{"tool", "knt"}};
    write_report(dir / "r.json", dir / "r.csv", rs, prov);
    write_report(dir / "r.json", dir / "r.csv", rs, prov);
    const auto csv = slurp(dir / "r.csv");
    CHECK(csv.rfind("experiment_id,method,d,L,key_seed,verif_auc,top1,cls_auc\n", 0) == 0);
    std::size_t lines = 0;
    for (char ch : csv) lines += ch == '\n';
    CHECK(lines == 5);
    const auto doc = nlohmann::json::parse(slurp(dir / "r.json"));
    CHECK(doc["kind"] == "metrics");
    CHECK(doc["results"].size() == 2);
    CHECK(format_double(0.1) == "0.1");
}
