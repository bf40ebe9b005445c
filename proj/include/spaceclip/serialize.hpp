#pragma once

// JSON bindings for every serializable config. Field names match the run
// configuration file schema one-to-one.

#include <json.hpp>

#include "spaceclip/decoder.hpp"
#include "spaceclip/encoder.hpp"
#include "spaceclip/losses.hpp"
#include "spaceclip/metrics.hpp"

namespace spaceclip {

using json = nlohmann::ordered_json;

namespace detail {

template <typename T>
void get_field(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("config field '") + key + "': " + e.what());
    }
}

}  // namespace detail

// BackboneSpec ---------------------------------------------------------------

inline json to_json(const BackboneSpec& s) {
    return json{{"model_id", s.model_id},
                {"patch_size", s.patch_size},
                {"input_side", s.input_side},
                {"hidden_dim", s.hidden_dim},
                {"num_hidden_states", s.num_hidden_states},
                {"num_attention_heads", s.num_attention_heads},
                {"mlp_ratio", s.mlp_ratio},
                {"image_mean", s.image_mean},
                {"image_std", s.image_std}};
}

inline BackboneSpec backbone_spec_from_json(const json& j) {
    BackboneSpec s;
    detail::get_field(j, "model_id", s.model_id);
    detail::get_field(j, "patch_size", s.patch_size);
    detail::get_field(j, "input_side", s.input_side);
    detail::get_field(j, "hidden_dim", s.hidden_dim);
    detail::get_field(j, "num_hidden_states", s.num_hidden_states);
    detail::get_field(j, "num_attention_heads", s.num_attention_heads);
    detail::get_field(j, "mlp_ratio", s.mlp_ratio);
    detail::get_field(j, "image_mean", s.image_mean);
    detail::get_field(j, "image_std", s.image_std);
    return s;
}

// ModelConfig ----------------------------------------------------------------

inline json to_json(const ModelConfig& c) {
    return json{{"semantic_indices", c.semantic_indices},
                {"structural_indices", c.structural_indices},
                {"decoder_channels", c.decoder_channels},
                {"dropout", c.dropout},
                {"use_film", c.use_film},
                {"use_structural", c.use_structural},
                {"min_depth", c.min_depth},
                {"max_depth", c.max_depth},
                {"output_size", std::vector<int>{c.output_rows, c.output_cols}},
                {"film_hidden_width", c.film_hidden_width},
                {"head_width", c.head_width},
                {"input_mode", c.input_mode}};
}

inline ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    detail::get_field(j, "semantic_indices", c.semantic_indices);
    detail::get_field(j, "structural_indices", c.structural_indices);
    detail::get_field(j, "decoder_channels", c.decoder_channels);
    detail::get_field(j, "dropout", c.dropout);
    detail::get_field(j, "use_film", c.use_film);
    detail::get_field(j, "use_structural", c.use_structural);
    detail::get_field(j, "min_depth", c.min_depth);
    detail::get_field(j, "max_depth", c.max_depth);
    if (j.contains("output_size")) {
        auto v = j.at("output_size").get<std::vector<int>>();
        SPACECLIP_CHECK(v.size() == 2, "config field 'output_size' must be [rows, cols]");
        c.output_rows = v[0];
        c.output_cols = v[1];
    }
    detail::get_field(j, "film_hidden_width", c.film_hidden_width);
    detail::get_field(j, "head_width", c.head_width);
    detail::get_field(j, "input_mode", c.input_mode);
    return c;
}

// LossConfig -----------------------------------------------------------------

inline json to_json(const LossConfig& c) {
    return json{{"lambda_ssim", c.lambda_ssim},
                {"silog_lambda", c.silog_lambda},
                {"silog_alpha", c.silog_alpha},
                {"ssim_window", c.ssim_window},
                {"ssim_sigma", c.ssim_sigma},
                {"min_depth", c.min_depth},
                {"max_depth", c.max_depth},
                {"ssim_c1", c.ssim_c1},
                {"ssim_c2", c.ssim_c2}};
}

inline LossConfig loss_config_from_json(const json& j) {
    LossConfig c;
    detail::get_field(j, "lambda_ssim", c.lambda_ssim);
    detail::get_field(j, "silog_lambda", c.silog_lambda);
    detail::get_field(j, "silog_alpha", c.silog_alpha);
    detail::get_field(j, "ssim_window", c.ssim_window);
    detail::get_field(j, "ssim_sigma", c.ssim_sigma);
    detail::get_field(j, "min_depth", c.min_depth);
    detail::get_field(j, "max_depth", c.max_depth);
    detail::get_field(j, "ssim_c1", c.ssim_c1);
    detail::get_field(j, "ssim_c2", c.ssim_c2);
    return c;
}

// Metrics --------------------------------------------------------------------

inline json to_json(const MetricsReport& r) {
    return json{{"abs_rel", r.abs_rel},
                {"sq_rel", r.sq_rel},
                {"rmse", r.rmse},
                {"rmse_log", r.rmse_log},
                {"d1", r.d1},
                {"d2", r.d2},
                {"d3", r.d3},
                {"n_pixels", r.n_pixels},
                {"protocol",
                 {{"cap", std::vector<double>{r.protocol.cap_min, r.protocol.cap_max}},
                  {"crop", to_string(r.protocol.crop)},
                  {"split", r.protocol.split}}}};
}

}  // namespace spaceclip
