#pragma once

// Frozen CLIP-style vision transformer loaded from a safetensors checkpoint.
// Weight resolution order: an explicit file path, a directory containing
// model.safetensors, or a model-hub identifier resolved inside the local cache
// directory (SPACE_CLIP_BACKBONE_DIR overrides the cache location). No network
// access: checkpoints must already be on disk.

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "spaceclip/encoder.hpp"

namespace spaceclip {

// ---------------------------------------------------------------------------
// safetensors
// ---------------------------------------------------------------------------

struct SafeTensorEntry {
    std::string dtype;
    std::vector<int> shape;
    std::uint64_t begin = 0, end = 0;
};

class SafeTensorsFile {
  public:
    explicit SafeTensorsFile(const std::string& path) : path_(path) {
        std::ifstream in(path, std::ios::binary);
        SPACECLIP_CHECK(in, "cannot open checkpoint: ", path);
        std::uint64_t header_len = 0;
        in.read(reinterpret_cast<char*>(&header_len), 8);
        SPACECLIP_CHECK(in && header_len > 0 && header_len < (1ull << 31),
                        "corrupt safetensors header in ", path);
        std::string header(header_len, '\0');
        in.read(header.data(), static_cast<std::streamsize>(header_len));
        SPACECLIP_CHECK(in, "truncated safetensors header in ", path);
        nlohmann::json j = nlohmann::json::parse(header);
        for (auto& [name, meta] : j.items()) {
            if (name == "__metadata__") continue;
            SafeTensorEntry e;
            e.dtype = meta.at("dtype").get<std::string>();
            for (const auto& d : meta.at("shape")) e.shape.push_back(d.get<int>());
            e.begin = meta.at("data_offsets")[0].get<std::uint64_t>();
            e.end = meta.at("data_offsets")[1].get<std::uint64_t>();
            entries_[name] = e;
        }
        data_begin_ = 8 + header_len;
        in.seekg(0, std::ios::end);
        file_size_ = static_cast<std::uint64_t>(in.tellg());
    }

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }

    const SafeTensorEntry& entry(const std::string& name) const {
        auto it = entries_.find(name);
        SPACECLIP_CHECK(it != entries_.end(), "tensor '", name, "' missing from checkpoint ",
                        path_);
        return it->second;
    }

    std::vector<double> read(const std::string& name) const {
        const SafeTensorEntry& e = entry(name);
        const std::uint64_t bytes = e.end - e.begin;
        SPACECLIP_CHECK(data_begin_ + e.end <= file_size_, "tensor '", name,
                        "' extends past end of ", path_);
        std::ifstream in(path_, std::ios::binary);
        in.seekg(static_cast<std::streamoff>(data_begin_ + e.begin));
        std::vector<unsigned char> raw(bytes);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
        SPACECLIP_CHECK(in, "failed reading tensor '", name, "' from ", path_);

        std::int64_t n = 1;
        for (int d : e.shape) n *= d;
        std::vector<double> out(static_cast<std::size_t>(n));
        if (e.dtype == "F32") {
            SPACECLIP_CHECK(bytes == static_cast<std::uint64_t>(n) * 4, "size mismatch for ", name);
            for (std::int64_t i = 0; i < n; ++i) {
                float f;
                std::memcpy(&f, raw.data() + i * 4, 4);
                out[static_cast<std::size_t>(i)] = static_cast<double>(f);
            }
        } else if (e.dtype == "F64") {
            SPACECLIP_CHECK(bytes == static_cast<std::uint64_t>(n) * 8, "size mismatch for ", name);
            std::memcpy(out.data(), raw.data(), bytes);
        } else if (e.dtype == "F16") {
            SPACECLIP_CHECK(bytes == static_cast<std::uint64_t>(n) * 2, "size mismatch for ", name);
            for (std::int64_t i = 0; i < n; ++i) {
                std::uint16_t h;
                std::memcpy(&h, raw.data() + i * 2, 2);
                out[static_cast<std::size_t>(i)] = half_to_double(h);
            }
        } else if (e.dtype == "BF16") {
            SPACECLIP_CHECK(bytes == static_cast<std::uint64_t>(n) * 2, "size mismatch for ", name);
            for (std::int64_t i = 0; i < n; ++i) {
                std::uint32_t bits = static_cast<std::uint32_t>(raw[static_cast<std::size_t>(i * 2)]) |
                                     (static_cast<std::uint32_t>(raw[static_cast<std::size_t>(i * 2 + 1)]) << 8);
                bits <<= 16;
                float f;
                std::memcpy(&f, &bits, 4);
                out[static_cast<std::size_t>(i)] = static_cast<double>(f);
            }
        } else {
            throw Error("unsupported safetensors dtype '" + e.dtype + "' for " + name);
        }
        return out;
    }

    Mat read_matrix(const std::string& name, int rows, int cols) const {
        const auto& e = entry(name);
        std::int64_t n = 1;
        for (int d : e.shape) n *= d;
        SPACECLIP_CHECK(n == static_cast<std::int64_t>(rows) * cols, "tensor '", name,
                        "' has ", n, " elements, expected ", rows, "x", cols);
        auto v = read(name);
        Mat m(rows, cols);
        std::memcpy(m.data(), v.data(), v.size() * sizeof(double));
        return m;
    }

    Vec read_vector(const std::string& name, int len) const {
        auto v = read(name);
        SPACECLIP_CHECK(static_cast<int>(v.size()) == len, "tensor '", name, "' has ",
                        v.size(), " elements, expected ", len);
        return Eigen::Map<const Vec>(v.data(), len);
    }

    const std::map<std::string, SafeTensorEntry>& entries() const { return entries_; }

  private:
    static double half_to_double(std::uint16_t h) {
        const std::uint32_t sign = (h >> 15) & 1;
        const std::uint32_t exp = (h >> 10) & 0x1f;
        const std::uint32_t frac = h & 0x3ff;
        double v;
        if (exp == 0) {
            v = std::ldexp(static_cast<double>(frac), -24);
        } else if (exp == 31) {
            v = frac ? std::nan("") : std::numeric_limits<double>::infinity();
        } else {
            v = std::ldexp(static_cast<double>(frac) / 1024.0 + 1.0,
                           static_cast<int>(exp) - 15);
        }
        return sign ? -v : v;
    }

    std::string path_;
    std::map<std::string, SafeTensorEntry> entries_;
    std::uint64_t data_begin_ = 0, file_size_ = 0;
};

/// Map a checkpoint reference (file, directory, or hub id) to a safetensors
/// file path. Hub ids resolve under SPACE_CLIP_BACKBONE_DIR (default
/// ~/.cache/space-clip).
inline std::string resolve_backbone_checkpoint(const std::string& ref) {
    namespace fs = std::filesystem;
    if (fs::exists(ref)) {
        if (fs::is_directory(ref)) {
            fs::path p = fs::path(ref) / "model.safetensors";
            SPACECLIP_CHECK(fs::exists(p), "no model.safetensors inside ", ref);
            return p.string();
        }
        return ref;
    }
    std::string cache;
    if (const char* env = std::getenv("SPACE_CLIP_BACKBONE_DIR")) {
        cache = env;
    } else if (const char* home = std::getenv("HOME")) {
        cache = std::string(home) + "/.cache/space-clip";
    } else {
        cache = ".cache/space-clip";
    }
    fs::path p = fs::path(cache) / ref / "model.safetensors";
    SPACECLIP_CHECK(fs::exists(p), "backbone weights not found: tried '", ref,
                    "' and cache path ", p.string());
    return p.string();
}

// ---------------------------------------------------------------------------
// Transformer forward
// ---------------------------------------------------------------------------

class ClipVitBackbone : public Backbone {
  public:
    ClipVitBackbone(const std::string& checkpoint_ref, BackboneSpec spec)
        : spec_(std::move(spec)) {
        spec_.validate();
        const std::string path = resolve_backbone_checkpoint(checkpoint_ref);
        SafeTensorsFile f(path);
        const int d = spec_.hidden_dim;
        const int patch_in = 3 * spec_.patch_size * spec_.patch_size;
        const int tokens = spec_.num_patches() + 1;
        const std::string base = "vision_model.";

        // (d, 3, p, p) stored row-major -> rows d, cols 3*p*p ordered (c, ky, kx).
        patch_embed_ = f.read_matrix(base + "embeddings.patch_embedding.weight", d, patch_in);
        class_embed_ = f.read_vector(base + "embeddings.class_embedding", d);
        pos_embed_ = f.read_matrix(base + "embeddings.position_embedding.weight", tokens, d);
        pre_ln_w_ = f.read_vector(base + "pre_layrnorm.weight", d);
        pre_ln_b_ = f.read_vector(base + "pre_layrnorm.bias", d);

        const int n_layers = spec_.num_hidden_states - 1;
        const int mlp_dim = d * spec_.mlp_ratio;
        layers_.resize(static_cast<std::size_t>(n_layers));
        for (int i = 0; i < n_layers; ++i) {
            const std::string lb = base + "encoder.layers." + std::to_string(i) + ".";
            Layer& L = layers_[static_cast<std::size_t>(i)];
            L.ln1_w = f.read_vector(lb + "layer_norm1.weight", d);
            L.ln1_b = f.read_vector(lb + "layer_norm1.bias", d);
            L.q_w = f.read_matrix(lb + "self_attn.q_proj.weight", d, d);
            L.q_b = f.read_vector(lb + "self_attn.q_proj.bias", d);
            L.k_w = f.read_matrix(lb + "self_attn.k_proj.weight", d, d);
            L.k_b = f.read_vector(lb + "self_attn.k_proj.bias", d);
            L.v_w = f.read_matrix(lb + "self_attn.v_proj.weight", d, d);
            L.v_b = f.read_vector(lb + "self_attn.v_proj.bias", d);
            L.o_w = f.read_matrix(lb + "self_attn.out_proj.weight", d, d);
            L.o_b = f.read_vector(lb + "self_attn.out_proj.bias", d);
            L.ln2_w = f.read_vector(lb + "layer_norm2.weight", d);
            L.ln2_b = f.read_vector(lb + "layer_norm2.bias", d);
            L.fc1_w = f.read_matrix(lb + "mlp.fc1.weight", mlp_dim, d);
            L.fc1_b = f.read_vector(lb + "mlp.fc1.bias", mlp_dim);
            L.fc2_w = f.read_matrix(lb + "mlp.fc2.weight", d, mlp_dim);
            L.fc2_b = f.read_vector(lb + "mlp.fc2.bias", d);
        }
    }

    const BackboneSpec& spec() const override { return spec_; }

    FeatureBundle extract_features(const Image& prepared,
                                   const std::set<int>& indices) const override {
        SPACECLIP_CHECK(prepared.rows == spec_.input_side && prepared.cols == spec_.input_side,
                        "expected prepared ", spec_.input_side, "x", spec_.input_side,
                        " input, got ", prepared.rows, "x", prepared.cols);
        check_indices(indices);
        const int d = spec_.hidden_dim;
        const int np = spec_.num_patches();

        // Patch embedding as a strided convolution, pixels ordered (c, ky, kx).
        Mat patches = patchify_chw(prepared, spec_.patch_size);
        Mat x(np + 1, d);
        x.row(0) = class_embed_.transpose();
        x.bottomRows(np).noalias() = patches * patch_embed_.transpose();
        x += pos_embed_;
        layer_norm_inplace(x, pre_ln_w_, pre_ln_b_);

        FeatureBundle out;
        out.grid_side = spec_.grid_side();
        auto record = [&](int idx, const Mat& state) {
            if (indices.count(idx)) out.states[idx] = state.bottomRows(np);
        };
        record(0, x);
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            x = layer_forward(layers_[l], x);
            record(static_cast<int>(l) + 1, x);
        }
        out.cls_vector = x.row(0).transpose();
        return out;
    }

    std::uint64_t weights_fingerprint() const override {
        std::uint64_t h = 14695981039346656037ull;
        auto fm = [&h](const Mat& m) {
            h = fnv1a64(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double), h);
        };
        auto fv = [&h](const Vec& v) {
            h = fnv1a64(v.data(), static_cast<std::size_t>(v.size()) * sizeof(double), h);
        };
        fm(patch_embed_);
        fv(class_embed_);
        fm(pos_embed_);
        fv(pre_ln_w_);
        fv(pre_ln_b_);
        for (const auto& L : layers_) {
            fv(L.ln1_w); fv(L.ln1_b);
            fm(L.q_w); fv(L.q_b);
            fm(L.k_w); fv(L.k_b);
            fm(L.v_w); fv(L.v_b);
            fm(L.o_w); fv(L.o_b);
            fv(L.ln2_w); fv(L.ln2_b);
            fm(L.fc1_w); fv(L.fc1_b);
            fm(L.fc2_w); fv(L.fc2_b);
        }
        return h;
    }

  private:
    struct Layer {
        Vec ln1_w, ln1_b, ln2_w, ln2_b;
        Mat q_w, k_w, v_w, o_w;
        Vec q_b, k_b, v_b, o_b;
        Mat fc1_w, fc2_w;
        Vec fc1_b, fc2_b;
    };

    static Mat patchify_chw(const Image& img, int patch) {
        const int gs = img.rows / patch;
        Mat out(gs * gs, 3 * patch * patch);
        for (int py = 0; py < gs; ++py) {
            for (int px = 0; px < gs; ++px) {
                int col = 0;
                for (int ch = 0; ch < 3; ++ch)
                    for (int ky = 0; ky < patch; ++ky)
                        for (int kx = 0; kx < patch; ++kx)
                            out(py * gs + px, col++) =
                                img.at(py * patch + ky, px * patch + kx, ch);
            }
        }
        return out;
    }

    static void layer_norm_inplace(Mat& x, const Vec& w, const Vec& b,
                                   double eps = 1e-5) {
        for (int r = 0; r < x.rows(); ++r) {
            const double m = x.row(r).mean();
            const double var = (x.row(r).array() - m).square().mean();
            const double inv = 1.0 / std::sqrt(var + eps);
            x.row(r) = (((x.row(r).array() - m) * inv) * w.transpose().array() +
                        b.transpose().array())
                           .matrix();
        }
    }

    static double quick_gelu(double v) { return v / (1.0 + std::exp(-1.702 * v)); }

    Mat attention(const Layer& L, const Mat& x) const {
        const int n = static_cast<int>(x.rows());
        const int d = spec_.hidden_dim;
        const int heads = spec_.num_attention_heads;
        const int hd = d / heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
        Mat q = x * L.q_w.transpose();
        q.rowwise() += L.q_b.transpose();
        Mat k = x * L.k_w.transpose();
        k.rowwise() += L.k_b.transpose();
        Mat v = x * L.v_w.transpose();
        v.rowwise() += L.v_b.transpose();
        Mat ctx(n, d);
        for (int h = 0; h < heads; ++h) {
            auto qh = q.middleCols(h * hd, hd);
            auto kh = k.middleCols(h * hd, hd);
            auto vh = v.middleCols(h * hd, hd);
            Mat scores = qh * kh.transpose() * scale;
            for (int r = 0; r < n; ++r) {
                const double mx = scores.row(r).maxCoeff();
                Eigen::ArrayXd e = (scores.row(r).array() - mx).exp();
                scores.row(r) = (e / e.sum()).matrix();
            }
            ctx.middleCols(h * hd, hd).noalias() = scores * vh;
        }
        Mat out = ctx * L.o_w.transpose();
        out.rowwise() += L.o_b.transpose();
        return out;
    }

    Mat layer_forward(const Layer& L, const Mat& x_in) const {
        Mat x = x_in;
        Mat h = x;
        layer_norm_inplace(h, L.ln1_w, L.ln1_b);
        x += attention(L, h);
        h = x;
        layer_norm_inplace(h, L.ln2_w, L.ln2_b);
        Mat m = h * L.fc1_w.transpose();
        m.rowwise() += L.fc1_b.transpose();
        m = m.unaryExpr([](double v) { return quick_gelu(v); });
        Mat m2 = m * L.fc2_w.transpose();
        m2.rowwise() += L.fc2_b.transpose();
        x += m2;
        return x;
    }

    BackboneSpec spec_;
    Mat patch_embed_, pos_embed_;
    Vec class_embed_, pre_ln_w_, pre_ln_b_;
    std::vector<Layer> layers_;
};

}  // namespace spaceclip
