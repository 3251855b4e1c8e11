#include "tggm/checkpoint.hpp"

#include <fstream>
#include <vector>

#include <json.hpp>

#include "tggm/errors.hpp"

namespace tggm {

namespace {

constexpr int kFormatVersion = 1;

std::string sidecar_path(const std::string& path) { return path + ".bin"; }

}  // namespace

void save_checkpoint(const TggmModel& model, const std::string& path,
                     std::uint64_t seed) {
  nlohmann::json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["head"] =
      model.head == Head::Regression ? "regression" : "classification";
  std::vector<int> dims;
  dims.push_back(model.input_dim());
  for (int l = 0; l < model.depth(); ++l) dims.push_back(model.hidden_dim(l));
  dims.push_back(model.output_dim());
  manifest["dims"] = dims;
  std::vector<double> hidden_sigma2;
  for (const auto& l : model.hidden) hidden_sigma2.push_back(l.sigma2);
  manifest["sigma2"] = {{"hidden", hidden_sigma2},
                        {"output", model.output.sigma2}};
  manifest["seed"] = seed;
  manifest["param_count"] = param_count(model);
  manifest["sidecar"] = sidecar_path(path);

  std::ofstream mout(path);
  if (!mout) throw FormatError("save_checkpoint: cannot write " + path);
  mout << manifest.dump(2) << "\n";

  const Vector theta = flatten_params(model);
  std::ofstream bout(sidecar_path(path), std::ios::binary);
  if (!bout)
    throw FormatError("save_checkpoint: cannot write " + sidecar_path(path));
  // row-major little-endian float64 blocks in checkpoint order
  bout.write(reinterpret_cast<const char*>(theta.data()),
             static_cast<std::streamsize>(sizeof(double) * theta.size()));
}

TggmModel load_checkpoint(const std::string& path) {
  std::ifstream min(path);
  if (!min) throw FormatError("load_checkpoint: cannot open " + path);
  nlohmann::json manifest;
  try {
    min >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("load_checkpoint: bad manifest: ") + e.what());
  }
  if (manifest.value("format_version", -1) != kFormatVersion)
    throw FormatError("load_checkpoint: unsupported format version");

  const std::vector<int> dims = manifest.at("dims").get<std::vector<int>>();
  const Head head = manifest.at("head").get<std::string>() == "regression"
                        ? Head::Regression
                        : Head::Classification;
  TggmModel model = init_params(dims, head, 0, 1.0);
  const auto hidden_sigma2 =
      manifest.at("sigma2").at("hidden").get<std::vector<double>>();
  if (hidden_sigma2.size() != model.hidden.size())
    throw FormatError("load_checkpoint: sigma2 layer count mismatch");
  for (std::size_t l = 0; l < hidden_sigma2.size(); ++l)
    model.hidden[l].sigma2 = hidden_sigma2[l];
  model.output.sigma2 = manifest.at("sigma2").at("output").get<double>();

  const long count = manifest.at("param_count").get<long>();
  if (count != param_count(model))
    throw FormatError("load_checkpoint: parameter count mismatch");

  std::ifstream bin(manifest.at("sidecar").get<std::string>(),
                    std::ios::binary);
  if (!bin) throw FormatError("load_checkpoint: cannot open sidecar");
  Vector theta(count);
  bin.read(reinterpret_cast<char*>(theta.data()),
           static_cast<std::streamsize>(sizeof(double) * count));
  if (!bin) throw FormatError("load_checkpoint: truncated sidecar");
  unflatten_params(model, theta);
  return model;
}

}  // namespace tggm
