#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ted4/container.hpp"
#include "ted4/model.hpp"

namespace ted4 {

// Full-precision training output (CBOR). Unlike the container this keeps
// soft mask logits and unquantized attributes, so it can be re-encoded.

inline nlohmann::json model_config_json(const ModelConfig& c) {
  return {{"offsets", c.dims.offsets}, {"feature_dim", c.dims.feature_dim}, {"temporal_dim", c.dims.temporal_dim},
          {"frame_count", c.frame_count}, {"bank_dim", c.bank_dim}, {"deform_hidden", c.deform_hidden},
          {"decoder_hidden", c.decoder_hidden}, {"pe_bands", c.pe_bands}, {"hyper_hidden", c.hyper_hidden},
          {"ar_chunks", c.ar_chunks}, {"ar_hidden", c.ar_hidden}, {"voxel_size", c.voxel_size},
          {"dx_scale", c.dx_scale}, {"temporal_activation", c.temporal_activation}, {"box_min", c.box_min},
          {"box_max", c.box_max}, {"base_step", c.base_step}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.dims.offsets = j.at("offsets");
  c.dims.feature_dim = j.at("feature_dim");
  c.dims.temporal_dim = j.at("temporal_dim");
  c.frame_count = j.at("frame_count");
  c.bank_dim = j.at("bank_dim");
  c.deform_hidden = j.at("deform_hidden");
  c.decoder_hidden = j.at("decoder_hidden");
  c.pe_bands = j.at("pe_bands");
  c.hyper_hidden = j.at("hyper_hidden");
  c.ar_chunks = j.at("ar_chunks");
  c.ar_hidden = j.at("ar_hidden");
  c.voxel_size = j.at("voxel_size");
  c.dx_scale = j.at("dx_scale");
  c.temporal_activation = j.at("temporal_activation");
  c.box_min = j.at("box_min").get<Vec3>();
  c.box_max = j.at("box_max").get<Vec3>();
  c.base_step = j.at("base_step").get<std::array<double, kAttributeTypes>>();
  return c;
}

inline std::vector<std::uint8_t> save_checkpoint(const Model& m, double lambda_rate = 0.0) {
  nlohmann::json j;
  j["format"] = "ted4-checkpoint";
  j["lambda_rate"] = lambda_rate;
  j["config"] = model_config_json(m.config);
  j["ids"] = nlohmann::json::array();
  j["anchors"] = nlohmann::json::array();
  for (const Anchor& a : m.anchors.anchors) {
    j["ids"].push_back(a.id);
    j["anchors"].push_back(a.data);
  }
  Model copy = m;
  j["nets"] = nlohmann::json::array();
  for (Mlp* n : detail::weight_order(copy)) j["nets"].push_back(n->params());
  j["bank"] = m.bank.values;
  return nlohmann::json::to_cbor(j);
}

inline Model load_checkpoint(std::span<const std::uint8_t> bytes, double* lambda_rate = nullptr) {
  try {
    const nlohmann::json j = nlohmann::json::from_cbor(bytes.begin(), bytes.end());
    if (j.at("format") != "ted4-checkpoint") fail(ErrorKind::format, "not a checkpoint");
    const ModelConfig c = model_config_from_json(j.at("config"));
    if (lambda_rate) *lambda_rate = j.value("lambda_rate", 0.0);
    const auto& anchors = j.at("anchors");
    Model m = make_model(c, anchors.size());
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      Anchor& a = m.anchors.anchors[i];
      a.id = j.at("ids").at(i);
      a.data = anchors[i].get<std::vector<double>>();
      if (a.data.size() != c.dims.size()) fail(ErrorKind::format, "checkpoint anchor has the wrong size");
    }
    const auto nets = detail::weight_order(m);
    if (j.at("nets").size() != nets.size()) fail(ErrorKind::format, "checkpoint network count mismatch");
    for (std::size_t n = 0; n < nets.size(); ++n) {
      auto p = j.at("nets")[n].get<std::vector<double>>();
      if (p.size() != nets[n]->params().size()) fail(ErrorKind::format, "checkpoint network shape mismatch");
      nets[n]->params() = std::move(p);
    }
    m.bank.values = j.at("bank").get<std::vector<double>>();
    if (m.bank.values.size() != static_cast<std::size_t>(m.bank.rows() * m.bank.dim))
      fail(ErrorKind::format, "checkpoint bank shape mismatch");
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("bad checkpoint: ") + e.what());
  }
}

}  // namespace ted4
