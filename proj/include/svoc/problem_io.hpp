#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"
#include "expr.hpp"
#include "mp.hpp"

namespace svoc {

struct SchemaError : std::runtime_error {
    SchemaError(const std::string& msg, std::string pointer_)
        : std::runtime_error(msg + " at " + pointer_), pointer(std::move(pointer_)) {}
    std::string pointer;
};

namespace io_detail {

using nlohmann::json;

inline const json& require(const json& j, const std::string& key, const std::string& pointer) {
    if (!j.contains(key)) throw SchemaError("missing field", pointer + "/" + key);
    return j.at(key);
}

inline double require_number(const json& j, const std::string& key, const std::string& pointer) {
    const json& v = require(j, key, pointer);
    if (!v.is_number()) throw SchemaError("expected a number", pointer + "/" + key);
    return v.get<double>();
}

inline VectorXd read_vector(const json& v, const std::string& pointer) {
    if (!v.is_array()) throw SchemaError("expected an array", pointer);
    VectorXd out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto& e = v.at(i);
        if (e.is_string()) {
            const std::string s = e.get<std::string>();
            if (s == "inf" || s == "+inf") {
                out[static_cast<Eigen::Index>(i)] = std::numeric_limits<double>::infinity();
                continue;
            }
            if (s == "-inf") {
                out[static_cast<Eigen::Index>(i)] = -std::numeric_limits<double>::infinity();
                continue;
            }
            throw SchemaError("expected a number or +-inf", pointer + "/" + std::to_string(i));
        }
        if (!e.is_number()) throw SchemaError("expected a number", pointer + "/" + std::to_string(i));
        out[static_cast<Eigen::Index>(i)] = e.get<double>();
    }
    return out;
}

inline MatrixXd read_matrix(const json& v, const std::string& pointer) {
    if (v.is_number()) return MatrixXd::Constant(1, 1, v.get<double>());
    if (!v.is_array() || v.empty()) throw SchemaError("expected a matrix", pointer);
    if (v.at(0).is_number()) {
        // single row
        VectorXd row = read_vector(v, pointer);
        return row.transpose();
    }
    const std::size_t rows = v.size();
    const std::size_t cols = v.at(0).size();
    MatrixXd out(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        VectorXd row = read_vector(v.at(i), pointer + "/" + std::to_string(i));
        if (static_cast<std::size_t>(row.size()) != cols)
            throw SchemaError("ragged matrix", pointer + "/" + std::to_string(i));
        out.row(static_cast<Eigen::Index>(i)) = row.transpose();
    }
    return out;
}

inline bool uses_variable(const expr::Expr& e, const std::string& name) {
    using expr::Node;
    switch (e->kind) {
        case Node::Kind::number:
            return false;
        case Node::Kind::variable:
            return e->name == name;
        case Node::Kind::unary_minus:
        case Node::Kind::call:
            return uses_variable(e->left, name);
        case Node::Kind::binary:
            return uses_variable(e->left, name) || uses_variable(e->right, name);
    }
    return false;
}

struct ExprVec {
    std::vector<expr::Expr> items;
    std::vector<std::vector<expr::Expr>> jac;  // d items / d x_j

    bool any_uses(const std::string& name) const {
        for (const auto& e : items)
            if (uses_variable(e, name)) return true;
        return false;
    }
};

inline ExprVec parse_rows(const json& arr, Eigen::Index state_dim, const std::string& pointer) {
    ExprVec out;
    if (!arr.is_array()) throw SchemaError("expected an array of expressions", pointer);
    for (std::size_t i = 0; i < arr.size(); ++i) {
        if (!arr.at(i).is_string())
            throw SchemaError("expected an expression string", pointer + "/" + std::to_string(i));
        out.items.push_back(expr::parse(arr.at(i).get<std::string>()));
    }
    out.jac.resize(out.items.size());
    for (std::size_t i = 0; i < out.items.size(); ++i)
        for (Eigen::Index j = 0; j < state_dim; ++j)
            out.jac[i].push_back(expr::differentiate(out.items[i], "x" + std::to_string(j + 1)));
    return out;
}

inline void bind_state(expr::Env& env, const VectorXd& x, const VectorXd& u) {
    for (Eigen::Index i = 0; i < x.size(); ++i) env["x" + std::to_string(i + 1)] = x[i];
    for (Eigen::Index i = 0; i < u.size(); ++i) env["u" + std::to_string(i + 1)] = u[i];
}

}  // namespace io_detail

// ---------------------------------------------------------------------------
// Problem loading
// ---------------------------------------------------------------------------

inline ProblemSpec load_problem_json(const nlohmann::json& doc) {
    using io_detail::require;
    using io_detail::require_number;
    using nlohmann::json;

    ProblemSpec spec;
    spec.alpha = require_number(doc, "alpha", "");
    const double T = require_number(doc, "T", "");
    const double Nd = require_number(doc, "N", "");
    if (Nd < 1 || Nd != std::floor(Nd)) throw SchemaError("N must be a positive integer", "/N");
    spec.grid = TimeGrid(T, static_cast<std::size_t>(Nd));
    const auto n = static_cast<Eigen::Index>(require_number(doc, "state_dim", ""));
    const auto d = static_cast<Eigen::Index>(require_number(doc, "control_dim", ""));

    // dynamics
    const json& dynj = require(doc, "dynamics", "");
    const std::string dkind = require(dynj, "kind", "/dynamics").get<std::string>();
    Dynamics dyn;
    dyn.state_dim = n;
    dyn.control_dim = d;
    if (dkind == "expr") {
        auto f = std::make_shared<io_detail::ExprVec>(
            io_detail::parse_rows(require(dynj, "f", "/dynamics"), n, "/dynamics/f"));
        auto g = std::make_shared<io_detail::ExprVec>(
            io_detail::parse_rows(require(dynj, "g", "/dynamics"), n, "/dynamics/g"));
        if (f->items.size() != static_cast<std::size_t>(n) ||
            g->items.size() != static_cast<std::size_t>(n))
            throw SchemaError("dynamics rows must match state_dim", "/dynamics");
        dyn.f_depends_on_outer_time = f->any_uses("t");
        dyn.g_depends_on_outer_time = g->any_uses("t");
        auto eval_vec = [n](const std::shared_ptr<io_detail::ExprVec>& v, double t, double s,
                            const VectorXd& x, const VectorXd& u) -> VectorXd {
            expr::Env env{{"t", t}, {"s", s}};
            io_detail::bind_state(env, x, u);
            VectorXd out(n);
            for (Eigen::Index i = 0; i < n; ++i) out[i] = expr::eval(v->items[i], env);
            return out;
        };
        auto eval_jac = [n](const std::shared_ptr<io_detail::ExprVec>& v, double t, double s,
                            const VectorXd& x, const VectorXd& u) -> MatrixXd {
            expr::Env env{{"t", t}, {"s", s}};
            io_detail::bind_state(env, x, u);
            MatrixXd out(n, n);
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = 0; j < n; ++j) out(i, j) = expr::eval(v->jac[i][j], env);
            return out;
        };
        dyn.f = [f, eval_vec](double t, double s, const VectorXd& x, const VectorXd& u) {
            return eval_vec(f, t, s, x, u);
        };
        dyn.g = [g, eval_vec](double t, double s, const VectorXd& x, const VectorXd& u) {
            return eval_vec(g, t, s, x, u);
        };
        dyn.f_x = [f, eval_jac](double t, double s, const VectorXd& x, const VectorXd& u) {
            return eval_jac(f, t, s, x, u);
        };
        dyn.g_x = [g, eval_jac](double t, double s, const VectorXd& x, const VectorXd& u) {
            return eval_jac(g, t, s, x, u);
        };
    } else if (dkind == "lq") {
        const MatrixXd a1 = io_detail::read_matrix(require(dynj, "A1", "/dynamics"), "/dynamics/A1");
        const MatrixXd a2 = io_detail::read_matrix(require(dynj, "A2", "/dynamics"), "/dynamics/A2");
        const MatrixXd b1 = io_detail::read_matrix(require(dynj, "B1", "/dynamics"), "/dynamics/B1");
        const MatrixXd b2 = io_detail::read_matrix(require(dynj, "B2", "/dynamics"), "/dynamics/B2");
        if (a1.rows() != n || a2.rows() != n || b1.rows() != n || b2.rows() != n ||
            a1.cols() != n || a2.cols() != n || b1.cols() != d || b2.cols() != d)
            throw SchemaError("LQ matrix dimensions do not match state/control dims", "/dynamics");
        dyn.f_depends_on_outer_time = false;
        dyn.g_depends_on_outer_time = false;
        dyn.f = [a1, b1](double, double, const VectorXd& x, const VectorXd& u) -> VectorXd {
            return a1 * x + b1 * u;
        };
        dyn.g = [a2, b2](double, double, const VectorXd& x, const VectorXd& u) -> VectorXd {
            return a2 * x + b2 * u;
        };
        dyn.f_x = [a1](double, double, const VectorXd&, const VectorXd&) -> MatrixXd { return a1; };
        dyn.g_x = [a2](double, double, const VectorXd&, const VectorXd&) -> MatrixXd { return a2; };
        LqData lq;
        lq.A1 = [a1](double, double) { return a1; };
        lq.A2 = [a2](double, double) { return a2; };
        lq.B1 = [b1](double, double) { return b1; };
        lq.B2 = [b2](double, double) { return b2; };
        spec.lq = lq;
    } else {
        throw SchemaError("dynamics kind must be 'expr' or 'lq'", "/dynamics/kind");
    }
    spec.dynamics = dyn;

    // cost
    const json& costj = require(doc, "cost", "");
    const std::string ckind = require(costj, "kind", "/cost").get<std::string>();
    if (ckind == "expr") {
        auto l = expr::parse(require(costj, "l", "/cost").get<std::string>());
        auto hterm = expr::parse(require(costj, "h", "/cost").get<std::string>());
        std::vector<expr::Expr> lx, h0x, hTx;
        for (Eigen::Index j = 0; j < n; ++j) {
            lx.push_back(expr::differentiate(l, "x" + std::to_string(j + 1)));
            h0x.push_back(expr::differentiate(hterm, "x" + std::to_string(j + 1) + "_0"));
            hTx.push_back(expr::differentiate(hterm, "x" + std::to_string(j + 1) + "_T"));
        }
        spec.cost.l = [l](double t, const VectorXd& x, const VectorXd& u) {
            expr::Env env{{"t", t}};
            io_detail::bind_state(env, x, u);
            return expr::eval(l, env);
        };
        spec.cost.l_x = [lx, n](double t, const VectorXd& x, const VectorXd& u) {
            expr::Env env{{"t", t}};
            io_detail::bind_state(env, x, u);
            RowVectorXd out(n);
            for (Eigen::Index j = 0; j < n; ++j) out[j] = expr::eval(lx[j], env);
            return out;
        };
        auto h_env = [](const VectorXd& x0, const VectorXd& xT) {
            expr::Env env;
            for (Eigen::Index i = 0; i < x0.size(); ++i) {
                env["x" + std::to_string(i + 1) + "_0"] = x0[i];
                env["x" + std::to_string(i + 1) + "_T"] = xT[i];
            }
            return env;
        };
        spec.cost.h = [hterm, h_env](const VectorXd& x0, const VectorXd& xT) {
            return expr::eval(hterm, h_env(x0, xT));
        };
        spec.cost.h_x0 = [h0x, h_env, n](const VectorXd& x0, const VectorXd& xT) {
            auto env = h_env(x0, xT);
            RowVectorXd out(n);
            for (Eigen::Index j = 0; j < n; ++j) out[j] = expr::eval(h0x[j], env);
            return out;
        };
        spec.cost.h_x = [hTx, h_env, n](const VectorXd& x0, const VectorXd& xT) {
            auto env = h_env(x0, xT);
            RowVectorXd out(n);
            for (Eigen::Index j = 0; j < n; ++j) out[j] = expr::eval(hTx[j], env);
            return out;
        };
    } else if (ckind == "lq") {
        const MatrixXd q = io_detail::read_matrix(require(costj, "Q", "/cost"), "/cost/Q");
        const MatrixXd r = io_detail::read_matrix(require(costj, "R", "/cost"), "/cost/R");
        const MatrixXd m = io_detail::read_matrix(require(costj, "M", "/cost"), "/cost/M");
        if (q.rows() != n || r.rows() != d || m.rows() != n)
            throw SchemaError("LQ cost dimensions do not match state/control dims", "/cost");
        spec.cost.l = [q, r](double, const VectorXd& x, const VectorXd& u) {
            return 0.5 * (x.dot(q * x) + u.dot(r * u));
        };
        spec.cost.l_x = [q](double, const VectorXd& x, const VectorXd&) -> RowVectorXd {
            return (q * x).transpose();
        };
        spec.cost.h = [m](const VectorXd&, const VectorXd& xT) { return 0.5 * xT.dot(m * xT); };
        spec.cost.h_x0 = [n](const VectorXd&, const VectorXd&) -> RowVectorXd {
            return RowVectorXd::Zero(n);
        };
        spec.cost.h_x = [m](const VectorXd&, const VectorXd& xT) -> RowVectorXd {
            return (m * xT).transpose();
        };
        if (spec.lq) {
            spec.lq->Q = [q](double) { return q; };
            spec.lq->R = [r](double) { return r; };
            spec.lq->M = m;
        }
    } else {
        throw SchemaError("cost kind must be 'expr' or 'lq'", "/cost/kind");
    }

    // terminal constraint
    if (doc.contains("terminal")) {
        const json& termj = doc.at("terminal");
        const std::string tkind = require(termj, "kind", "/terminal").get<std::string>();
        if (tkind == "none") {
            spec.terminal = TerminalConstraint::none_set();
        } else if (tkind == "point") {
            spec.terminal = TerminalConstraint::point_set(
                io_detail::read_vector(require(termj, "x0", "/terminal"), "/terminal/x0"),
                io_detail::read_vector(require(termj, "xT", "/terminal"), "/terminal/xT"));
        } else if (tkind == "box") {
            spec.terminal = TerminalConstraint::box_set(
                io_detail::read_vector(require(termj, "lower", "/terminal"), "/terminal/lower"),
                io_detail::read_vector(require(termj, "upper", "/terminal"), "/terminal/upper"));
        } else {
            throw SchemaError("terminal kind must be 'none', 'point' or 'box'", "/terminal/kind");
        }
    }

    // inequality constraints
    if (doc.contains("inequalities")) {
        const json& arr = doc.at("inequalities");
        if (!arr.is_array()) throw SchemaError("expected an array", "/inequalities");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string ptr = "/inequalities/" + std::to_string(i);
            const json& cj = arr.at(i);
            auto gexpr = expr::parse(require(cj, "G", ptr).get<std::string>());
            std::vector<expr::Expr> gx;
            for (Eigen::Index j = 0; j < n; ++j)
                gx.push_back(expr::differentiate(gexpr, "x" + std::to_string(j + 1)));
            InequalityConstraint c;
            c.label = cj.contains("label") ? cj.at("label").get<std::string>()
                                           : "G" + std::to_string(i + 1);
            c.G = [gexpr](double t, const VectorXd& x) {
                expr::Env env{{"t", t}};
                io_detail::bind_state(env, x, VectorXd());
                return expr::eval(gexpr, env);
            };
            c.G_x = [gx, n](double t, const VectorXd& x) {
                expr::Env env{{"t", t}};
                io_detail::bind_state(env, x, VectorXd());
                RowVectorXd out(n);
                for (Eigen::Index j = 0; j < n; ++j) out[j] = expr::eval(gx[j], env);
                return out;
            };
            spec.inequalities.push_back(std::move(c));
        }
    }

    spec.x0 = io_detail::read_vector(require(doc, "x0", ""), "/x0");
    const json& cb = require(doc, "control_bounds", "");
    spec.control_bounds.lower = io_detail::read_vector(require(cb, "lower", "/control_bounds"),
                                                       "/control_bounds/lower");
    spec.control_bounds.upper = io_detail::read_vector(require(cb, "upper", "/control_bounds"),
                                                       "/control_bounds/upper");
    spec.u_ref = doc.contains("u_ref") ? io_detail::read_vector(doc.at("u_ref"), "/u_ref")
                                       : VectorXd::Zero(d);

    const auto diags = validate_spec(spec);
    if (!diags.empty()) {
        std::string msg = "spec validation failed:";
        for (const auto& m : diags) msg += "\n  - " + m;
        throw SchemaError(msg, "");
    }
    return spec;
}

inline ProblemSpec load_problem(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open problem file: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError(std::string("invalid JSON: ") + e.what(), "");
    }
    return load_problem_json(doc);
}

// ---------------------------------------------------------------------------
// Outputs
// ---------------------------------------------------------------------------

struct SolverRunInfo {
    std::string solver;
    double alpha = 0.0;
    std::size_t n = 0;
    std::map<std::string, double> options;
};

inline nlohmann::ordered_json report_to_json(const SolveReport& report, const SolverRunInfo& info) {
    nlohmann::ordered_json j;
    j["solver"] = info.solver;
    j["alpha"] = info.alpha;
    j["n"] = info.n;
    j["cost"] = report.cost;
    j["iterations"] = report.iterations;
    j["converged"] = report.converged;
    nlohmann::ordered_json res;
    for (const auto& [k, v] : report.residuals) res[k] = v;
    j["residuals"] = res;
    nlohmann::ordered_json optj;
    for (const auto& [k, v] : info.options) optj[k] = v;
    j["options"] = optj;
    j["p_terminal_value_is_convention"] = true;
    return j;
}

// trajectories.csv: t, x1..xn, u1..ud, p1..pn, theta1..thetam with %.12e
// formatting and LF endings; byte-identical for identical inputs.
inline void write_outputs(const std::string& dir, const Trajectory& xbar, const Trajectory& ubar,
                          const Trajectory& p, const MultiplierSet& mult,
                          const SolveReport& report, const SolverRunInfo& info) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const TimeGrid& grid = xbar.grid();
    const auto theta = mult.theta_cumulative();

    std::ofstream csv(fs::path(dir) / "trajectories.csv", std::ios::binary);
    if (!csv) throw std::runtime_error("cannot write trajectories.csv in " + dir);
    csv << "t";
    for (Eigen::Index i = 0; i < xbar.dim(); ++i) csv << ",x" << (i + 1);
    for (Eigen::Index i = 0; i < ubar.dim(); ++i) csv << ",u" << (i + 1);
    for (Eigen::Index i = 0; i < p.dim(); ++i) csv << ",p" << (i + 1);
    for (std::size_t i = 0; i < theta.size(); ++i) csv << ",theta" << (i + 1);
    csv << "\n";
    char buf[32];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.12e", v);
        csv << ',' << buf;
    };
    for (std::size_t k = 0; k < grid.node_count(); ++k) {
        std::snprintf(buf, sizeof(buf), "%.12e", grid.node(k));
        csv << buf;
        for (Eigen::Index i = 0; i < xbar.dim(); ++i) put(xbar.values()(static_cast<Eigen::Index>(k), i));
        for (Eigen::Index i = 0; i < ubar.dim(); ++i) put(ubar.values()(static_cast<Eigen::Index>(k), i));
        for (Eigen::Index i = 0; i < p.dim(); ++i) put(p.values()(static_cast<Eigen::Index>(k), i));
        for (const auto& th : theta) put(th.values()(static_cast<Eigen::Index>(k), 0));
        csv << "\n";
    }
    csv.close();

    std::ofstream rep(fs::path(dir) / "report.json", std::ios::binary);
    if (!rep) throw std::runtime_error("cannot write report.json in " + dir);
    rep << report_to_json(report, info).dump(2) << "\n";
}

}  // namespace svoc
