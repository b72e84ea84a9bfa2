#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "streamseg/decoder.hpp"
#include "streamseg/errors.hpp"
#include "streamseg/merging.hpp"
#include "streamseg/superpoint.hpp"

namespace streamseg {

// Weight container: "SSWT", u32 version, u64 header length, JSON header, then
// all tensors as little-endian float32 row major. The header lists every
// tensor with shape and payload offset plus the convention flags; any of the
// geo / decoder / heads sections may be absent.

struct LoadedWeights {
    std::optional<GeoPoolWeights> geo;
    std::optional<DecoderWeights> decoder;
    HeadWeights heads;
};

namespace detail {

constexpr char kWeightsMagic[4] = {'S', 'S', 'W', 'T'};
constexpr std::uint32_t kWeightsVersion = 1;

class TensorWriter {
  public:
    void add(const std::string& name, const MatrixXd& m) {
        nlohmann::json e;
        e["name"] = name;
        e["rows"] = m.rows();
        e["cols"] = m.cols();
        e["offset"] = payload_.size() * sizeof(float);
        dir_.push_back(std::move(e));
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                payload_.push_back(static_cast<float>(m(i, j)));
    }
    void add(const std::string& name, const VectorXd& v) {
        add(name, MatrixXd(v.transpose()));
    }
    void add_mlp(const std::string& prefix, const Mlp& mlp) {
        for (std::size_t k = 0; k < mlp.layers.size(); ++k) {
            add(prefix + "." + std::to_string(k) + ".weight", mlp.layers[k].weight);
            add(prefix + "." + std::to_string(k) + ".bias", mlp.layers[k].bias);
        }
    }
    void add_linear(const std::string& prefix, const Linear& l) {
        add(prefix + ".weight", l.weight);
        add(prefix + ".bias", l.bias);
    }
    void add_norm(const std::string& prefix, const LayerNorm& n) {
        add(prefix + ".gamma", n.gamma);
        add(prefix + ".beta", n.beta);
    }

    const nlohmann::json& directory() const { return dir_; }
    const std::vector<float>& payload() const { return payload_; }

  private:
    nlohmann::json dir_ = nlohmann::json::array();
    std::vector<float> payload_;
};

class TensorReader {
  public:
    TensorReader(const std::string& path, const nlohmann::json& dir, std::vector<float> payload)
        : path_(path), payload_(std::move(payload)) {
        for (const auto& e : dir) {
            Entry entry{e.at("rows").get<Eigen::Index>(), e.at("cols").get<Eigen::Index>(),
                        e.at("offset").get<std::uint64_t>()};
            if (entry.offset % sizeof(float) != 0 ||
                entry.offset / sizeof(float) +
                        static_cast<std::uint64_t>(entry.rows) * entry.cols >
                    payload_.size())
                throw ParseError(path_, "tensor " + e.at("name").get<std::string>() +
                                            " exceeds payload",
                                 static_cast<long>(entry.offset));
            entries_[e.at("name").get<std::string>()] = entry;
        }
    }

    MatrixXd mat(const std::string& name, Eigen::Index rows, Eigen::Index cols) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ParseError(path_, "missing tensor " + name);
        const Entry& e = it->second;
        if (e.rows != rows || e.cols != cols)
            throw ParseError(path_, "tensor " + name + " has shape " + std::to_string(e.rows) +
                                        "x" + std::to_string(e.cols) + ", expected " +
                                        std::to_string(rows) + "x" + std::to_string(cols));
        MatrixXd m(rows, cols);
        const float* src = payload_.data() + e.offset / sizeof(float);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = src[i * cols + j];
        return m;
    }
    VectorXd vec(const std::string& name, Eigen::Index n) const {
        return mat(name, 1, n).row(0);
    }
    void read_mlp(const std::string& prefix, Mlp& mlp) const {
        for (std::size_t k = 0; k < mlp.layers.size(); ++k) {
            Linear& l = mlp.layers[k];
            l.weight = mat(prefix + "." + std::to_string(k) + ".weight", l.out_dim(), l.in_dim());
            l.bias = vec(prefix + "." + std::to_string(k) + ".bias", l.out_dim());
        }
    }
    void read_linear(const std::string& prefix, Linear& l) const {
        l.weight = mat(prefix + ".weight", l.out_dim(), l.in_dim());
        l.bias = vec(prefix + ".bias", l.out_dim());
    }
    void read_norm(const std::string& prefix, LayerNorm& n) const {
        n.gamma = vec(prefix + ".gamma", n.gamma.size());
        n.beta = vec(prefix + ".beta", n.beta.size());
    }

  private:
    struct Entry {
        Eigen::Index rows, cols;
        std::uint64_t offset;
    };
    std::string path_;
    std::map<std::string, Entry> entries_;
    std::vector<float> payload_;
};

inline std::vector<int> mlp_dims(const Mlp& mlp) {
    std::vector<int> dims{mlp.in_dim()};
    for (const auto& l : mlp.layers) dims.push_back(l.out_dim());
    return dims;
}

inline void layer_tensors(TensorWriter& tw, const std::string& prefix,
                          const DecoderLayerWeights& lw) {
    tw.add_linear(prefix + ".cross_q", lw.cross_q);
    tw.add_linear(prefix + ".cross_k", lw.cross_k);
    tw.add_linear(prefix + ".cross_v", lw.cross_v);
    tw.add_linear(prefix + ".cross_out", lw.cross_out);
    tw.add_linear(prefix + ".self_q", lw.self_q);
    tw.add_linear(prefix + ".self_k", lw.self_k);
    tw.add_linear(prefix + ".self_v", lw.self_v);
    tw.add_linear(prefix + ".self_out", lw.self_out);
    tw.add_mlp(prefix + ".ffn", lw.ffn);
    tw.add_norm(prefix + ".ln_cross", lw.ln_cross);
    tw.add_norm(prefix + ".ln_self", lw.ln_self);
    tw.add_norm(prefix + ".ln_ffn", lw.ln_ffn);
}

inline void read_layer_tensors(const TensorReader& tr, const std::string& prefix,
                               DecoderLayerWeights& lw) {
    tr.read_linear(prefix + ".cross_q", lw.cross_q);
    tr.read_linear(prefix + ".cross_k", lw.cross_k);
    tr.read_linear(prefix + ".cross_v", lw.cross_v);
    tr.read_linear(prefix + ".cross_out", lw.cross_out);
    tr.read_linear(prefix + ".self_q", lw.self_q);
    tr.read_linear(prefix + ".self_k", lw.self_k);
    tr.read_linear(prefix + ".self_v", lw.self_v);
    tr.read_linear(prefix + ".self_out", lw.self_out);
    tr.read_mlp(prefix + ".ffn", lw.ffn);
    tr.read_norm(prefix + ".ln_cross", lw.ln_cross);
    tr.read_norm(prefix + ".ln_self", lw.ln_self);
    tr.read_norm(prefix + ".ln_ffn", lw.ln_ffn);
}

}  // namespace detail

inline void save_weights(const std::string& path, const LoadedWeights& lw) {
    nlohmann::json header;
    header["version"] = detail::kWeightsVersion;
    detail::TensorWriter tw;

    if (lw.geo) {
        lw.geo->validate();
        header["geo"]["local"] = detail::mlp_dims(lw.geo->mlp_local);
        header["geo"]["weight"] = detail::mlp_dims(lw.geo->mlp_weight);
        tw.add_mlp("geo.local", lw.geo->mlp_local);
        tw.add_mlp("geo.weight", lw.geo->mlp_weight);
    }
    if (lw.decoder) {
        const DecoderWeights& d = *lw.decoder;
        header["decoder"]["channels"] = d.channels();
        header["decoder"]["ffn_hidden"] = d.layers[0].ffn.layers.front().out_dim();
        header["decoder"]["norm"] = d.norm == NormPlacement::Pre ? "pre" : "post";
        header["decoder"]["num_heads"] = d.num_heads;
        if (d.cls_head) header["decoder"]["cls"] = detail::mlp_dims(*d.cls_head);
        for (int l = 0; l < 3; ++l)
            detail::layer_tensors(tw, "decoder.layer" + std::to_string(l), d.layers[l]);
        tw.add_linear("decoder.mask_head", d.mask_head);
        if (d.cls_head) tw.add_mlp("decoder.cls", *d.cls_head);
    }
    if (lw.heads.box_head) header["heads"]["box"] = detail::mlp_dims(*lw.heads.box_head);
    if (lw.heads.contrastive_head)
        header["heads"]["contrastive"] = detail::mlp_dims(*lw.heads.contrastive_head);
    if (lw.heads.semantic_head)
        header["heads"]["semantic"] = detail::mlp_dims(*lw.heads.semantic_head);
    if (lw.heads.box_head) tw.add_mlp("heads.box", *lw.heads.box_head);
    if (lw.heads.contrastive_head) tw.add_mlp("heads.contrastive", *lw.heads.contrastive_head);
    if (lw.heads.semantic_head) tw.add_mlp("heads.semantic", *lw.heads.semantic_head);

    header["tensors"] = tw.directory();
    std::string header_str = header.dump();

    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw ParseError(path, "cannot open for writing");
    std::fwrite(detail::kWeightsMagic, 1, 4, fp);
    std::uint32_t version = detail::kWeightsVersion;
    std::fwrite(&version, sizeof(version), 1, fp);
    std::uint64_t header_len = header_str.size();
    std::fwrite(&header_len, sizeof(header_len), 1, fp);
    std::fwrite(header_str.data(), 1, header_str.size(), fp);
    std::fwrite(tw.payload().data(), sizeof(float), tw.payload().size(), fp);
    std::fclose(fp);
}

inline LoadedWeights load_weights(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw ParseError(path, "cannot open");
    char magic[4];
    std::uint32_t version = 0;
    std::uint64_t header_len = 0;
    if (std::fread(magic, 1, 4, fp) != 4 ||
        std::memcmp(magic, detail::kWeightsMagic, 4) != 0) {
        std::fclose(fp);
        throw ParseError(path, "bad magic", 0);
    }
    if (std::fread(&version, sizeof(version), 1, fp) != 1 ||
        version != detail::kWeightsVersion) {
        std::fclose(fp);
        throw ParseError(path, "unsupported version", 4);
    }
    if (std::fread(&header_len, sizeof(header_len), 1, fp) != 1) {
        std::fclose(fp);
        throw ParseError(path, "truncated header length", 8);
    }
    std::string header_str(header_len, '\0');
    if (std::fread(header_str.data(), 1, header_len, fp) != header_len) {
        std::fclose(fp);
        throw ParseError(path, "truncated header", 16);
    }
    std::vector<float> payload;
    {
        long start = std::ftell(fp);
        std::fseek(fp, 0, SEEK_END);
        long end = std::ftell(fp);
        std::fseek(fp, start, SEEK_SET);
        payload.resize(static_cast<std::size_t>(end - start) / sizeof(float));
        if (std::fread(payload.data(), sizeof(float), payload.size(), fp) != payload.size()) {
            std::fclose(fp);
            throw ParseError(path, "truncated payload", start);
        }
    }
    std::fclose(fp);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_str);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path, e.what(), 16 + static_cast<long>(e.byte));
    }

    detail::TensorReader tr(path, header.value("tensors", nlohmann::json::array()),
                            std::move(payload));
    LoadedWeights lw;
    if (header.contains("geo")) {
        GeoPoolWeights geo;
        geo.mlp_local = Mlp::zeros(header["geo"]["local"].get<std::vector<int>>());
        geo.mlp_weight = Mlp::zeros(header["geo"]["weight"].get<std::vector<int>>());
        tr.read_mlp("geo.local", geo.mlp_local);
        tr.read_mlp("geo.weight", geo.mlp_weight);
        geo.validate();
        lw.geo = std::move(geo);
    }
    if (header.contains("decoder")) {
        const auto& dj = header["decoder"];
        DecoderWeights d(dj.at("channels").get<int>(), dj.at("ffn_hidden").get<int>());
        std::string norm = dj.value("norm", "pre");
        if (norm != "pre" && norm != "post")
            throw ParseError(path, "unknown norm placement " + norm);
        d.norm = norm == "pre" ? NormPlacement::Pre : NormPlacement::Post;
        d.num_heads = dj.value("num_heads", 1);
        for (int l = 0; l < 3; ++l)
            detail::read_layer_tensors(tr, "decoder.layer" + std::to_string(l), d.layers[l]);
        tr.read_linear("decoder.mask_head", d.mask_head);
        if (dj.contains("cls")) {
            Mlp cls = Mlp::zeros(dj["cls"].get<std::vector<int>>());
            tr.read_mlp("decoder.cls", cls);
            d.cls_head = std::move(cls);
        }
        lw.decoder = std::move(d);
    }
    if (header.contains("heads")) {
        const auto& hj = header["heads"];
        auto load_head = [&](const char* key, const char* prefix) -> std::optional<Mlp> {
            if (!hj.contains(key)) return std::nullopt;
            Mlp m = Mlp::zeros(hj[key].get<std::vector<int>>());
            tr.read_mlp(prefix, m);
            return m;
        };
        lw.heads.box_head = load_head("box", "heads.box");
        lw.heads.contrastive_head = load_head("contrastive", "heads.contrastive");
        lw.heads.semantic_head = load_head("semantic", "heads.semantic");
    }
    return lw;
}

}  // namespace streamseg
