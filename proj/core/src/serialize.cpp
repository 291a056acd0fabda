#include "senn/serialize.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "senn/error.hpp"

namespace senn {

namespace {

void write_number(std::string& out, double v) {
  if (!std::isfinite(v)) {
    out += "null";
    return;
  }
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

void write_value(std::string& out, const nlohmann::json& j) {
  switch (j.type()) {
    case nlohmann::json::value_t::number_float:
      write_number(out, j.get<double>());
      return;
    case nlohmann::json::value_t::array: {
      out += '[';
      bool first = true;
      for (const auto& v : j) {
        if (!first) out += ',';
        first = false;
        write_value(out, v);
      }
      out += ']';
      return;
    }
    case nlohmann::json::value_t::object: {
      out += '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ',';
        first = false;
        out += nlohmann::json(it.key()).dump();
        out += ':';
        write_value(out, it.value());
      }
      out += '}';
      return;
    }
    default:
      out += j.dump();
  }
}

}  // namespace

std::string dump_json(const nlohmann::json& j) {
  std::string out;
  write_value(out, j);
  return out;
}

nlohmann::json network_to_json(const Network& net) {
  nlohmann::json j;
  j["input_dim"] = net.input_dim;
  nlohmann::json layers = nlohmann::json::array();
  for (const DenseLayer& layer : net.layers) {
    nlohmann::json lj;
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) row.push_back(layer.weights(r, c));
      rows.push_back(std::move(row));
    }
    lj["weights"] = std::move(rows);
    nlohmann::json acts = nlohmann::json::array();
    for (const RationalParams& th : layer.activations) acts.push_back({th.alpha, th.beta, th.gamma});
    lj["activations"] = std::move(acts);
    lj["is_output"] = layer.is_output;
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  return j;
}

Network network_from_json(const nlohmann::json& j) {
  try {
    Network net;
    net.input_dim = j.at("input_dim").get<Eigen::Index>();
    for (const auto& lj : j.at("layers")) {
      DenseLayer layer;
      const auto& rows = lj.at("weights");
      const Eigen::Index n_rows = static_cast<Eigen::Index>(rows.size());
      const Eigen::Index n_cols = n_rows > 0 ? static_cast<Eigen::Index>(rows[0].size()) : 0;
      layer.weights.resize(n_rows, n_cols);
      for (Eigen::Index r = 0; r < n_rows; ++r) {
        if (static_cast<Eigen::Index>(rows[r].size()) != n_cols) {
          throw Error(ErrorKind::ShapeMismatch, "ragged weight rows in snapshot");
        }
        for (Eigen::Index c = 0; c < n_cols; ++c) layer.weights(r, c) = rows[r][c].get<double>();
      }
      for (const auto& a : lj.at("activations")) {
        layer.activations.push_back({a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()});
      }
      layer.is_output = lj.at("is_output").get<bool>();
      net.layers.push_back(std::move(layer));
    }
    validate_network(net);
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("malformed snapshot: ") + e.what());
  }
}

void save_snapshot(const Network& net, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot write " + path);
  out << dump_json(network_to_json(net)) << '\n';
}

Network load_snapshot(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::Config, path + ": " + e.what());
  }
  return network_from_json(j);
}

}  // namespace senn
