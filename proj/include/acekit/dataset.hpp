#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "acekit/errors.hpp"

namespace acekit {

// Column-role mapping for CSV ingestion. Confounder order is preserved;
// categorical confounders are one-hot expanded at load time.
struct Schema {
    std::string outcome;
    std::string exposure;
    std::vector<std::string> confounders;
    std::set<std::string> categorical;

    static Schema from_json(const nlohmann::json& j) {
        Schema s;
        if (!j.contains("outcome") || !j.contains("exposure") || !j.contains("confounders"))
            throw ValidationError("schema: requires \"outcome\", \"exposure\" and \"confounders\"");
        s.outcome = j.at("outcome").get<std::string>();
        s.exposure = j.at("exposure").get<std::string>();
        for (const auto& c : j.at("confounders")) s.confounders.push_back(c.get<std::string>());
        if (j.contains("categorical"))
            for (const auto& c : j.at("categorical")) s.categorical.insert(c.get<std::string>());
        return s;
    }
};

// Analysis-ready data: confounder matrix W (continuous or 0/1 coded),
// binary exposure X and continuous outcome Y.
struct Dataset {
    Eigen::MatrixXd W;
    Eigen::VectorXd X;
    Eigen::VectorXd Y;
    std::vector<std::string> confounder_names;

    Eigen::Index n() const { return X.size(); }
    Eigen::Index p() const { return W.cols(); }

    Eigen::Index exposed_count() const {
        Eigen::Index c = 0;
        for (Eigen::Index i = 0; i < X.size(); ++i)
            if (X[i] == 1.0) ++c;
        return c;
    }

    void validate() const {
        if (n() < 4) throw ValidationError("dataset: need at least 4 records");
        if (p() < 1) throw ValidationError("dataset: need at least 1 confounder column");
        if (W.rows() != n() || Y.size() != n())
            throw ValidationError("dataset: row count mismatch between W, X, Y");
        if (static_cast<Eigen::Index>(confounder_names.size()) != p())
            throw ValidationError("dataset: confounder name count mismatch");
        for (Eigen::Index i = 0; i < n(); ++i) {
            if (!(X[i] == 0.0 || X[i] == 1.0))
                throw ValidationError("dataset: exposure not binary at record " +
                                      std::to_string(i + 1));
            if (!std::isfinite(Y[i]))
                throw ValidationError("dataset: non-finite outcome at record " +
                                      std::to_string(i + 1));
        }
        if (!W.allFinite()) throw ValidationError("dataset: non-finite confounder value");
        const Eigen::Index n1 = exposed_count();
        if (n1 < 2 || n() - n1 < 2)
            throw ValidationError("dataset: need at least 2 records per exposure arm");
    }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (char ch : line) {
        if (quoted) {
            if (ch == '"') quoted = false;
            else field.push_back(ch);
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(field);
            field.clear();
        } else if (ch != '\r') {
            field.push_back(ch);
        }
    }
    out.push_back(field);
    return out;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

inline double parse_cell(const std::string& raw, std::size_t row, const std::string& col) {
    const std::string s = trim(raw);
    if (s.empty())
        throw ValidationError("missing value at row " + std::to_string(row) + ", column \"" +
                              col + "\"");
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ValidationError("non-numeric cell \"" + s + "\" at row " + std::to_string(row) +
                              ", column \"" + col + "\"");
    if (!std::isfinite(v))
        throw ValidationError("non-finite value at row " + std::to_string(row) + ", column \"" +
                              col + "\"");
    return v;
}

}  // namespace detail

// Reads a CSV with header row into a validated Dataset. Categorical
// confounders are expanded to 0/1 indicators with the lowest observed
// level as the reference.
inline Dataset load_dataset(const std::string& path, const Schema& schema) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open dataset file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw ValidationError("empty dataset file: " + path);
    const std::vector<std::string> header = detail::split_csv_line(line);

    std::map<std::string, std::size_t> col_index;
    for (std::size_t i = 0; i < header.size(); ++i) col_index[detail::trim(header[i])] = i;

    auto require_col = [&](const std::string& name) {
        const auto it = col_index.find(name);
        if (it == col_index.end())
            throw ValidationError("schema column \"" + name + "\" not present in CSV header");
        return it->second;
    };

    const std::size_t y_col = require_col(schema.outcome);
    const std::size_t x_col = require_col(schema.exposure);
    std::vector<std::size_t> w_cols;
    for (const auto& c : schema.confounders) w_cols.push_back(require_col(c));

    std::vector<double> ys, xs;
    std::vector<std::vector<double>> ws(w_cols.size());
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (detail::trim(line).empty()) continue;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != header.size())
            throw ValidationError("row " + std::to_string(row) + " has " +
                                  std::to_string(fields.size()) + " fields, expected " +
                                  std::to_string(header.size()));
        ys.push_back(detail::parse_cell(fields[y_col], row, schema.outcome));
        const double x = detail::parse_cell(fields[x_col], row, schema.exposure);
        if (!(x == 0.0 || x == 1.0))
            throw ValidationError("exposure not binary at row " + std::to_string(row) +
                                  " (value " + std::to_string(x) + ")");
        xs.push_back(x);
        for (std::size_t k = 0; k < w_cols.size(); ++k)
            ws[k].push_back(detail::parse_cell(fields[w_cols[k]], row, schema.confounders[k]));
    }

    const Eigen::Index n = static_cast<Eigen::Index>(ys.size());

    // One-hot expansion: for each categorical column, sorted distinct levels;
    // first level is the reference.
    std::vector<std::pair<std::string, std::vector<double>>> expanded;
    for (std::size_t k = 0; k < w_cols.size(); ++k) {
        const std::string& name = schema.confounders[k];
        if (schema.categorical.count(name) == 0) {
            expanded.emplace_back(name, ws[k]);
            continue;
        }
        std::vector<double> levels = ws[k];
        std::sort(levels.begin(), levels.end());
        levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
        if (levels.size() < 2)
            throw ValidationError("categorical column \"" + name + "\" has a single level");
        for (std::size_t l = 1; l < levels.size(); ++l) {
            std::vector<double> ind(ws[k].size());
            for (std::size_t i = 0; i < ind.size(); ++i)
                ind[i] = (ws[k][i] == levels[l]) ? 1.0 : 0.0;
            std::ostringstream label;
            label << name << "." << levels[l];
            expanded.emplace_back(label.str(), std::move(ind));
        }
    }

    Dataset d;
    d.Y = Eigen::Map<Eigen::VectorXd>(ys.data(), n);
    d.X = Eigen::Map<Eigen::VectorXd>(xs.data(), n);
    d.W.resize(n, static_cast<Eigen::Index>(expanded.size()));
    for (std::size_t c = 0; c < expanded.size(); ++c) {
        d.confounder_names.push_back(expanded[c].first);
        for (Eigen::Index i = 0; i < n; ++i) d.W(i, c) = expanded[c].second[i];
    }
    d.validate();
    return d;
}

// Writes a Dataset back out in the ingestion CSV format (confounders,
// then exposure, then outcome). Values round-trip exactly.
inline void write_dataset_csv(const Dataset& d, const std::string& path,
                              const std::string& exposure_name = "x",
                              const std::string& outcome_name = "y") {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open output file: " + path);
    for (const auto& name : d.confounder_names) out << name << ",";
    out << exposure_name << "," << outcome_name << "\n";
    char buf[64];
    auto put = [&](double v, char sep) {
        const auto res = std::to_chars(buf, buf + sizeof(buf), v);
        out.write(buf, res.ptr - buf);
        out.put(sep);
    };
    for (Eigen::Index i = 0; i < d.n(); ++i) {
        for (Eigen::Index c = 0; c < d.p(); ++c) put(d.W(i, c), ',');
        put(d.X[i], ',');
        put(d.Y[i], '\n');
    }
}

}  // namespace acekit
