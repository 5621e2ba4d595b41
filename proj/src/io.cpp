#include "uq/io.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace uq {

json to_json(const MlpConfig& cfg) {
    json heads = json::array();
    for (auto h : cfg.head_activations) heads.push_back(to_string(h));
    return {{"layer_widths", cfg.layer_widths},
            {"activation", to_string(cfg.activation)},
            {"head_activations", heads},
            {"dropout_p", cfg.dropout_p}};
}

MlpConfig mlp_config_from_json(const json& j) {
    MlpConfig cfg;
    cfg.layer_widths = j.at("layer_widths").get<std::vector<std::size_t>>();
    cfg.activation = parse_activation(j.at("activation").get<std::string>());
    for (const auto& h : j.at("head_activations")) cfg.head_activations.push_back(parse_head_activation(h.get<std::string>()));
    cfg.dropout_p = j.at("dropout_p").get<double>();
    cfg.validate();
    return cfg;
}

json to_json(const Mlp& net) {
    json layers = json::array();
    for (const auto& l : net.params().layers) {
        json rows = json::array();
        for (std::size_t r = 0; r < l.weight.rows(); ++r) {
            const auto row = l.weight.row(r);
            rows.push_back(std::vector<double>(row.begin(), row.end()));
        }
        layers.push_back({{"weight", rows}, {"bias", l.bias}});
    }
    return {{"config", to_json(net.config())}, {"layers", layers}, {"step", net.params().step}};
}

Mlp mlp_from_json(const json& j) {
    MlpConfig cfg = mlp_config_from_json(j.at("config"));
    ParameterStore params;
    for (const auto& lj : j.at("layers")) {
        const auto rows = lj.at("weight").get<std::vector<std::vector<double>>>();
        const std::size_t cols = rows.empty() ? 0 : rows.front().size();
        std::vector<double> flat;
        flat.reserve(rows.size() * cols);
        for (const auto& r : rows) {
            if (r.size() != cols) throw ShapeError("checkpoint: ragged weight matrix");
            flat.insert(flat.end(), r.begin(), r.end());
        }
        DenseLayer layer;
        layer.weight = Matrix(rows.size(), cols, std::move(flat));
        layer.bias = lj.at("bias").get<std::vector<double>>();
        params.layers.push_back(std::move(layer));
    }
    params.step = j.value("step", std::uint64_t{0});
    return Mlp(std::move(cfg), std::move(params));
}

namespace {

json stats_json(const std::vector<ColumnStats>& s) {
    json out = json::array();
    for (const auto& c : s) out.push_back({{"mean", c.mean}, {"std", c.std}});
    return out;
}

std::vector<ColumnStats> stats_from_json(const json& j) {
    std::vector<ColumnStats> out;
    for (const auto& c : j) out.push_back({c.at("mean").get<double>(), c.at("std").get<double>()});
    return out;
}

} // namespace

json to_json(const Standardizer& s) { return {{"features", stats_json(s.features)}, {"targets", stats_json(s.targets)}}; }

Standardizer standardizer_from_json(const json& j) {
    return {stats_from_json(j.at("features")), stats_from_json(j.at("targets"))};
}

json to_json(const AugmentationSpec& a) {
    json j = {{"kind", to_string(a.kind)}, {"probability", a.probability}};
    switch (a.kind) {
    case AugmentationKind::gauss_noise: j["sigma"] = a.param; break;
    case AugmentationKind::feature_scale_jitter: j["range"] = a.param; break;
    case AugmentationKind::feature_dropout: j["p"] = a.param; break;
    case AugmentationKind::sign_flip: j["subset"] = a.subset; break;
    }
    return j;
}

AugmentationSpec augmentation_from_json(const json& j) {
    AugmentationSpec a;
    a.kind = parse_augmentation_kind(j.at("kind").get<std::string>());
    a.probability = j.value("probability", 1.0);
    switch (a.kind) {
    case AugmentationKind::gauss_noise: a.param = j.at("sigma").get<double>(); break;
    case AugmentationKind::feature_scale_jitter: a.param = j.at("range").get<double>(); break;
    case AugmentationKind::feature_dropout: a.param = j.at("p").get<double>(); break;
    case AugmentationKind::sign_flip: a.subset = j.value("subset", std::vector<std::size_t>{}); break;
    }
    a.validate();
    return a;
}

json dataset_manifest(const DatasetTable& t) {
    return {{"name", t.name},
            {"n", t.rows()},
            {"D", t.input_width()},
            {"K", t.output_width()},
            {"seed", t.seed},
            {"split_fractions", {{"train", t.fractions.train}, {"val", t.fractions.val}, {"test", t.fractions.test}}},
            {"dropped_columns", t.dropped_columns},
            {"rejected_rows", t.rejected_rows}};
}

json probe_manifest(const Probe& p) {
    json augs = json::array();
    for (const auto& a : p.config.augmentations) augs.push_back(to_json(a));
    return {{"dataset", p.data.name},
            {"fraction", p.config.fraction},
            {"rows", p.source_rows.size()},
            {"seed", p.config.seed},
            {"augmentations", augs},
            {"augment_on_the_fly", p.augmented()}};
}

std::string sha256_hex(std::string_view bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xF]);
    }
    return out;
}

std::string canonical_dump(const json& j) { return j.dump(); }

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw DataError("malformed JSON in '" + path.string() + "': " + e.what());
    }
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw std::runtime_error("write failed for '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

void write_json_file(const std::filesystem::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

} // namespace uq
