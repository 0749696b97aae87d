#pragma once

// JSON wire protocol shared by the remote backend client, the remote encoder
// client and the firewall's client-facing endpoint.
//
//   POST /v1/generate
//     {"mode":"unconditional"|"conditional",
//      "inputs":[{"image":{"shape":[H,W,C],"kind":"noise","data_b64":"..."}} | {"prompt":"..."}],
//      "seed":<uint64, optional>, "num_inference_steps":<int, optional>}
//   -> 200 {"images":[{"shape":[H,W,C],"kind":"pixel","data_b64":"..."}],"model_id":"..."}
//   -> 4xx/5xx {"error":"..."}
//
//   POST /v1/embed
//     {"images":[<image object>], "texts":["..."]}
//   -> 200 {"embeddings":[[...], ...], "encoder_id":"..."}   (images first, then texts)
//
// Emitters use insertion-ordered objects so bytes follow the field order above.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ufid/core/error.hpp"
#include "ufid/core/image.hpp"
#include "ufid/core/serialize.hpp"
#include "ufid/similarity.hpp"

namespace ufid::wire {

using ordered_json = nlohmann::ordered_json;
using json = nlohmann::json;

inline ordered_json image_to_json(const Image& img) {
  ordered_json j;
  j["shape"] = {img.shape().height, img.shape().width, img.shape().channels};
  j["kind"] = std::string(to_string(img.kind()));
  j["data_b64"] = base64_encode(serialize_payload(img));
  return j;
}

template <typename Json>
Image image_from_json(const Json& j) {
  try {
    const auto& shape = j.at("shape");
    require(shape.is_array() && shape.size() == 3, ErrorCode::protocol, "image shape must be [H,W,C]");
    const Shape s{shape.at(0).template get<std::size_t>(), shape.at(1).template get<std::size_t>(),
                  shape.at(2).template get<std::size_t>()};
    require(s.size() > 0, ErrorCode::protocol, "image shape must be positive");
    return deserialize_payload(base64_decode(j.at("data_b64").template get<std::string>()), s,
                               parse_image_kind(j.at("kind").template get<std::string>()));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::protocol, std::string("malformed image object: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::protocol) throw;
    fail(ErrorCode::protocol, e.what());
  }
}

struct GenerateRequest {
  QueryMode mode = QueryMode::unconditional;
  std::vector<Query> inputs;
  std::optional<std::uint64_t> seed;
  std::optional<int> num_inference_steps;
};

inline std::string encode_generate_request(const GenerateRequest& req) {
  ordered_json j;
  j["mode"] = std::string(to_string(req.mode));
  ordered_json inputs = ordered_json::array();
  for (const auto& q : req.inputs) {
    require(q.mode() == req.mode, ErrorCode::mode_mismatch, "request input mode differs from request mode");
    ordered_json item;
    if (q.mode() == QueryMode::unconditional)
      item["image"] = image_to_json(q.noise());
    else
      item["prompt"] = q.prompt();
    inputs.push_back(std::move(item));
  }
  j["inputs"] = std::move(inputs);
  if (req.seed) j["seed"] = *req.seed;
  if (req.num_inference_steps) j["num_inference_steps"] = *req.num_inference_steps;
  return j.dump();
}

// Inputs get ids "<id_prefix>/<index>".
inline GenerateRequest decode_generate_request(std::string_view body, const std::string& id_prefix = "in") {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    fail(ErrorCode::protocol, std::string("request is not JSON: ") + e.what());
  }
  require(j.is_object(), ErrorCode::protocol, "request must be a JSON object");
  GenerateRequest req;
  try {
    req.mode = parse_query_mode(j.at("mode").get<std::string>());
  } catch (const std::exception& e) {
    fail(ErrorCode::protocol, std::string("bad or missing mode: ") + e.what());
  }
  require(j.contains("inputs") && j["inputs"].is_array(), ErrorCode::protocol, "missing inputs array");
  std::size_t index = 0;
  for (const auto& item : j["inputs"]) {
    const std::string id = id_prefix + "/" + std::to_string(index++);
    require(item.is_object(), ErrorCode::protocol, "input must be an object");
    if (req.mode == QueryMode::unconditional) {
      require(item.contains("image") && !item.contains("prompt"), ErrorCode::protocol,
              "unconditional input needs exactly an image");
      Image img = image_from_json(item["image"]);
      require(img.kind() == ImageKind::noise, ErrorCode::protocol, "input image must be kind noise");
      req.inputs.push_back(Query::unconditional(id, std::move(img)));
    } else {
      require(item.contains("prompt") && item["prompt"].is_string() && !item.contains("image"), ErrorCode::protocol,
              "conditional input needs exactly a prompt");
      try {
        req.inputs.push_back(Query::conditional(id, item["prompt"].get<std::string>()));
      } catch (const Error& e) {
        fail(ErrorCode::protocol, e.what());
      }
    }
  }
  if (j.contains("seed")) {
    require(j["seed"].is_number_unsigned() || (j["seed"].is_number_integer() && j["seed"].get<std::int64_t>() >= 0),
            ErrorCode::protocol, "seed must be a non-negative integer");
    req.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("num_inference_steps")) {
    require(j["num_inference_steps"].is_number_integer(), ErrorCode::protocol, "num_inference_steps must be an integer");
    req.num_inference_steps = j["num_inference_steps"].get<int>();
  }
  return req;
}

struct GenerateResponse {
  std::vector<Image> images;
  std::string model_id;
};

inline std::string encode_generate_response(const GenerateResponse& resp) {
  ordered_json j;
  ordered_json images = ordered_json::array();
  for (const auto& img : resp.images) images.push_back(image_to_json(img));
  j["images"] = std::move(images);
  j["model_id"] = resp.model_id;
  return j.dump();
}

inline GenerateResponse decode_generate_response(std::string_view body) {
  GenerateResponse resp;
  try {
    const json j = json::parse(body);
    for (const auto& item : j.at("images")) {
      Image img = image_from_json(item);
      require(img.kind() == ImageKind::pixel, ErrorCode::protocol, "generated image must be kind pixel");
      resp.images.push_back(std::move(img));
    }
    resp.model_id = j.at("model_id").get<std::string>();
  } catch (const json::exception& e) {
    fail(ErrorCode::protocol, std::string("malformed generate response: ") + e.what());
  }
  return resp;
}

inline std::string encode_error(std::string_view message) {
  ordered_json j;
  j["error"] = std::string(message);
  return j.dump();
}

inline std::string encode_embed_request(std::span<const Image> images, std::span<const std::string> texts) {
  ordered_json j;
  ordered_json imgs = ordered_json::array();
  for (const auto& img : images) imgs.push_back(image_to_json(img));
  j["images"] = std::move(imgs);
  if (!texts.empty()) j["texts"] = std::vector<std::string>(texts.begin(), texts.end());
  return j.dump();
}

struct EmbedResponse {
  std::vector<std::vector<double>> embeddings;
  std::string encoder_id;
};

inline EmbedResponse decode_embed_response(std::string_view body) {
  EmbedResponse resp;
  try {
    const json j = json::parse(body);
    resp.embeddings = j.at("embeddings").get<std::vector<std::vector<double>>>();
    resp.encoder_id = j.at("encoder_id").get<std::string>();
  } catch (const json::exception& e) {
    fail(ErrorCode::protocol, std::string("malformed embed response: ") + e.what());
  }
  return resp;
}

inline std::string encode_embed_response(const EmbedResponse& resp) {
  ordered_json j;
  j["embeddings"] = resp.embeddings;
  j["encoder_id"] = resp.encoder_id;
  return j.dump();
}

}  // namespace ufid::wire
