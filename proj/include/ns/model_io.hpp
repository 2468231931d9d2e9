#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "ns/dataset.hpp"
#include "ns/svgp.hpp"

namespace ns {

using nlohmann::json;

namespace detail {

inline json matrix_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json r = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
        rows.push_back(std::move(r));
    }
    return rows;
}

inline Eigen::MatrixXd matrix_from_json(const json& j) {
    auto rows = static_cast<Eigen::Index>(j.size());
    auto cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : 0;
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)].get<double>();
    return m;
}

inline json vector_to_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline Eigen::VectorXd vector_from_json(const json& j) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j[static_cast<std::size_t>(i)].get<double>();
    return v;
}

inline json latent_to_json(const LatentState& st) {
    return json{{"kernel",
                 {{"family", to_string(st.cfg.kernel.family)},
                  {"variance", st.cfg.kernel.variance},
                  {"lengthscales", vector_to_json(st.cfg.kernel.lengthscales)},
                  {"alpha", st.cfg.kernel.alpha}}},
                {"prior_mean", st.cfg.prior_mean},
                {"inducing_ratio", st.cfg.inducing_ratio},
                {"inducing_inputs", matrix_to_json(st.post.inducing_inputs)},
                {"q_mean", vector_to_json(st.post.q_mean)},
                {"q_sqrt", matrix_to_json(st.post.q_sqrt)}};
}

inline LatentState latent_from_json(const json& j) {
    LatentState st;
    st.cfg.kernel.family = kernel_family_from_string(j["kernel"]["family"].get<std::string>());
    st.cfg.kernel.variance = j["kernel"]["variance"].get<double>();
    st.cfg.kernel.lengthscales = vector_from_json(j["kernel"]["lengthscales"]);
    st.cfg.kernel.alpha = j["kernel"]["alpha"].get<double>();
    st.cfg.prior_mean = j["prior_mean"].get<double>();
    st.cfg.inducing_ratio = j["inducing_ratio"].get<double>();
    st.post.inducing_inputs = matrix_from_json(j["inducing_inputs"]);
    st.post.q_mean = vector_from_json(j["q_mean"]);
    st.post.q_sqrt = matrix_from_json(j["q_sqrt"]);
    return st;
}

} // namespace detail

// Everything needed to score new rows: the model plus the training-time
// feature scaling.
struct ModelFile {
    HetGPModel model;
    Eigen::VectorXd x_mean, x_std;
    double y_min = 0.0, y_max = 1.0;
    bool y_scaled = false;
    std::vector<std::string> column_names;
    std::string behavioral_name;
};

inline json model_to_json(const ModelFile& mf) {
    return json{{"format_version", 1},
                {"latent_mean", detail::latent_to_json(mf.model.latent_mean)},
                {"latent_logstd", detail::latent_to_json(mf.model.latent_logstd)},
                {"train_stats",
                 {{"final_elbo", mf.model.train_stats.final_elbo},
                  {"initial_elbo", mf.model.train_stats.initial_elbo},
                  {"epochs", mf.model.train_stats.epochs},
                  {"elapsed_seconds", mf.model.train_stats.elapsed_seconds},
                  {"warning_non_improving", mf.model.train_stats.warning_non_improving}}},
                {"standardization",
                 {{"x_mean", detail::vector_to_json(mf.x_mean)},
                  {"x_std", detail::vector_to_json(mf.x_std)},
                  {"y_min", mf.y_min},
                  {"y_max", mf.y_max},
                  {"y_scaled", mf.y_scaled},
                  {"column_names", mf.column_names},
                  {"behavioral_name", mf.behavioral_name}}}};
}

inline ModelFile model_from_json(const json& j) {
    if (!j.contains("format_version") || j["format_version"].get<int>() != 1)
        throw DataError("unsupported model file format version");
    ModelFile mf;
    mf.model.latent_mean = detail::latent_from_json(j["latent_mean"]);
    mf.model.latent_logstd = detail::latent_from_json(j["latent_logstd"]);
    const auto& ts = j["train_stats"];
    mf.model.train_stats.final_elbo = ts["final_elbo"].get<double>();
    mf.model.train_stats.initial_elbo = ts["initial_elbo"].get<double>();
    mf.model.train_stats.epochs = ts["epochs"].get<int>();
    mf.model.train_stats.elapsed_seconds = ts["elapsed_seconds"].get<double>();
    mf.model.train_stats.warning_non_improving = ts["warning_non_improving"].get<bool>();
    const auto& sd = j["standardization"];
    mf.x_mean = detail::vector_from_json(sd["x_mean"]);
    mf.x_std = detail::vector_from_json(sd["x_std"]);
    mf.y_min = sd["y_min"].get<double>();
    mf.y_max = sd["y_max"].get<double>();
    mf.y_scaled = sd["y_scaled"].get<bool>();
    mf.column_names = sd["column_names"].get<std::vector<std::string>>();
    mf.behavioral_name = sd["behavioral_name"].get<std::string>();
    return mf;
}

inline void save_model(const ModelFile& mf, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write model file: " + path);
    out << model_to_json(mf).dump(2) << "\n";
}

inline ModelFile load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open model file: " + path);
    json j;
    in >> j;
    return model_from_json(j);
}

} // namespace ns
