#include <cstdio>
#include <fstream>

#include "hierot/harness.hpp"

namespace hierot {

namespace {

using nlohmann::json;

constexpr const char* kFormat = "hierot-checkpoint";
constexpr int kVersion = 1;

json tensor_json(const std::string& name, const Matrix& t) {
  std::vector<double> data(t.data(), t.data() + t.size());
  return json{{"name", name}, {"shape", {t.rows(), t.cols()}}, {"data", data}};
}

Matrix tensor_from_json(const json& j, Eigen::Index rows, Eigen::Index cols, const std::string& name) {
  const auto shape = j.at("shape").get<std::vector<Eigen::Index>>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (shape.size() != 2 || shape[0] != rows || shape[1] != cols ||
      static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw DataError("checkpoint tensor " + name + " has the wrong shape");
  Matrix m(rows, cols);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

}  // namespace

std::string config_hash(const ModelDims& d) {
  const std::string key = "input_dim=" + std::to_string(d.input_dim) +
                          ";hidden_dim=" + std::to_string(d.hidden_dim) +
                          ";channels=" + std::to_string(d.channels) +
                          ";classes=" + std::to_string(d.classes) + ";depth=" + std::to_string(d.depth) +
                          ";final_relu=" + (d.final_relu ? "1" : "0");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : key) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const Matrix& projections) {
  json tensors = json::array();
  params.for_each([&](const std::string& name, const Matrix& t, bool) {
    tensors.push_back(tensor_json(name, t));
  });
  const auto& d = params.dims;
  json doc{{"format", kFormat},
           {"version", kVersion},
           {"config_hash", config_hash(d)},
           {"dims",
            {{"input_dim", d.input_dim},
             {"hidden_dim", d.hidden_dim},
             {"channels", d.channels},
             {"classes", d.classes},
             {"depth", d.depth},
             {"final_relu", d.final_relu}}},
           {"tensors", tensors},
           {"projections", tensor_json("projections", projections)}};
  write_text(path, doc.dump() + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw DataError("checkpoint is not valid JSON");
  try {
    if (doc.at("format") != kFormat) throw DataError("not a hierot checkpoint");
    if (doc.at("version").get<int>() != kVersion)
      throw DataError("unsupported checkpoint version " + doc.at("version").dump());
    const json& jd = doc.at("dims");
    ModelDims d;
    d.input_dim = jd.at("input_dim").get<Eigen::Index>();
    d.hidden_dim = jd.at("hidden_dim").get<Eigen::Index>();
    d.channels = jd.at("channels").get<Eigen::Index>();
    d.classes = jd.at("classes").get<Eigen::Index>();
    d.depth = jd.at("depth").get<int>();
    d.final_relu = jd.at("final_relu").get<bool>();
    Checkpoint ck;
    ck.hash = doc.at("config_hash").get<std::string>();
    if (ck.hash != config_hash(d)) throw DataError("checkpoint config hash does not match its dims");
    ck.params = ModelParams::zeros(d);
    const json& tensors = doc.at("tensors");
    std::size_t idx = 0;
    ck.params.for_each([&](const std::string& name, Matrix& t, bool) {
      if (idx >= tensors.size() || tensors[idx].at("name") != name)
        throw DataError("checkpoint is missing tensor " + name);
      t = tensor_from_json(tensors[idx], t.rows(), t.cols(), name);
      ++idx;
    });
    const json& jp = doc.at("projections");
    const auto shape = jp.at("shape").get<std::vector<Eigen::Index>>();
    if (shape.size() != 2) throw DataError("checkpoint projections have the wrong rank");
    ck.projections = tensor_from_json(jp, shape[0], shape[1], "projections");
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

double evaluate(const Checkpoint& checkpoint, const LabeledDataset& data) {
  if (data.size() == 0) throw DataError("cannot evaluate on an empty dataset");
  if (data.samples.front().channels() != checkpoint.params.dims.input_dim)
    throw DataError("dataset patch dimension " + std::to_string(data.samples.front().channels()) +
                    " does not match checkpoint " + checkpoint.hash + " (input_dim " +
                    std::to_string(checkpoint.params.dims.input_dim) + ")");
  if (data.class_count > checkpoint.params.dims.classes)
    throw DataError("dataset has more classes than checkpoint " + checkpoint.hash);
  return evaluate(checkpoint.params, data);
}

}  // namespace hierot
