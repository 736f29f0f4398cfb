#pragma once

#include <cctype>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "special_functions.hpp"

namespace svoc::expr {

// Small expression language for problem configuration files.
//
// Grammar (precedence low to high): additive (+ -), multiplicative (* /),
// unary minus, power (^, right-associative, binds tighter than unary minus),
// primary = number | identifier | call | parenthesized. Functions: sin, cos,
// exp, log, abs, sqrt, gamma. `pi` is a predefined constant.

struct ParseError : std::runtime_error {
    ParseError(std::string msg, std::size_t line_, std::size_t col_)
        : std::runtime_error(std::move(msg)), line(line_), col(col_) {}
    std::size_t line = 1;
    std::size_t col = 1;
};

struct EvalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UnboundVariable : EvalError {
    explicit UnboundVariable(const std::string& name)
        : EvalError("unbound variable '" + name + "'"), variable(name) {}
    std::string variable;
};

struct DomainError : EvalError {
    using EvalError::EvalError;
};

struct UnsupportedDerivative : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Node;
using Expr = std::shared_ptr<const Node>;

struct Node {
    enum class Kind { number, variable, unary_minus, binary, call };
    Kind kind;
    double number = 0.0;        // number
    std::string name;           // variable / call
    char op = 0;                // binary: + - * / ^
    Expr left, right;           // binary; unary/call use left

    static Expr make_number(double v) {
        auto n = std::make_shared<Node>();
        n->kind = Kind::number;
        n->number = v;
        return n;
    }
    static Expr make_variable(std::string name) {
        auto n = std::make_shared<Node>();
        n->kind = Kind::variable;
        n->name = std::move(name);
        return n;
    }
    static Expr make_unary_minus(Expr child) {
        auto n = std::make_shared<Node>();
        n->kind = Kind::unary_minus;
        n->left = std::move(child);
        return n;
    }
    static Expr make_binary(char op, Expr l, Expr r) {
        auto n = std::make_shared<Node>();
        n->kind = Kind::binary;
        n->op = op;
        n->left = std::move(l);
        n->right = std::move(r);
        return n;
    }
    static Expr make_call(std::string fn, Expr arg) {
        auto n = std::make_shared<Node>();
        n->kind = Kind::call;
        n->name = std::move(fn);
        n->left = std::move(arg);
        return n;
    }
};

inline bool is_known_function(const std::string& name) {
    return name == "sin" || name == "cos" || name == "exp" || name == "log" || name == "abs" ||
           name == "sqrt" || name == "gamma";
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

namespace detail {

struct Token {
    enum class Kind { number, ident, op, lparen, rparen, end };
    Kind kind = Kind::end;
    double number = 0.0;
    std::string text;
    char op = 0;
    std::size_t line = 1, col = 1;
};

class Lexer {
  public:
    explicit Lexer(const std::string& src) : src_(src) {}

    Token next() {
        skip_ws();
        Token tok;
        tok.line = line_;
        tok.col = col_;
        if (pos_ >= src_.size()) return tok;
        const char c = src_[pos_];
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            std::size_t end = 0;
            double v = 0.0;
            try {
                v = std::stod(src_.substr(pos_), &end);
            } catch (const std::exception&) {
                throw ParseError("malformed number", line_, col_);
            }
            tok.kind = Token::Kind::number;
            tok.number = v;
            advance(end);
            return tok;
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t end = pos_;
            while (end < src_.size() &&
                   (std::isalnum(static_cast<unsigned char>(src_[end])) || src_[end] == '_'))
                ++end;
            tok.kind = Token::Kind::ident;
            tok.text = src_.substr(pos_, end - pos_);
            advance(end - pos_);
            return tok;
        }
        if (c == '(') {
            tok.kind = Token::Kind::lparen;
            advance(1);
            return tok;
        }
        if (c == ')') {
            tok.kind = Token::Kind::rparen;
            advance(1);
            return tok;
        }
        if (c == '+' || c == '-' || c == '*' || c == '/' || c == '^') {
            tok.kind = Token::Kind::op;
            tok.op = c;
            advance(1);
            return tok;
        }
        throw ParseError(std::string("unexpected character '") + c + "'", line_, col_);
    }

  private:
    void skip_ws() {
        while (pos_ < src_.size() &&
               std::isspace(static_cast<unsigned char>(src_[pos_])))
            advance(1);
    }
    void advance(std::size_t count) {
        for (std::size_t i = 0; i < count && pos_ < src_.size(); ++i, ++pos_) {
            if (src_[pos_] == '\n') {
                ++line_;
                col_ = 1;
            } else {
                ++col_;
            }
        }
    }
    const std::string& src_;
    std::size_t pos_ = 0;
    std::size_t line_ = 1, col_ = 1;
};

class Parser {
  public:
    explicit Parser(const std::string& src) : lexer_(src) { shift(); }

    Expr parse_expression() {
        Expr e = parse_additive();
        if (cur_.kind != Token::Kind::end)
            throw ParseError("expected end of expression", cur_.line, cur_.col);
        return e;
    }

  private:
    Expr parse_additive() {
        Expr lhs = parse_multiplicative();
        while (cur_.kind == Token::Kind::op && (cur_.op == '+' || cur_.op == '-')) {
            const char op = cur_.op;
            shift();
            lhs = Node::make_binary(op, lhs, parse_multiplicative());
        }
        return lhs;
    }

    Expr parse_multiplicative() {
        Expr lhs = parse_unary();
        while (cur_.kind == Token::Kind::op && (cur_.op == '*' || cur_.op == '/')) {
            const char op = cur_.op;
            shift();
            lhs = Node::make_binary(op, lhs, parse_unary());
        }
        return lhs;
    }

    Expr parse_unary() {
        if (cur_.kind == Token::Kind::op && cur_.op == '-') {
            shift();
            return Node::make_unary_minus(parse_unary());
        }
        return parse_power();
    }

    Expr parse_power() {
        Expr base = parse_primary();
        if (cur_.kind == Token::Kind::op && cur_.op == '^') {
            shift();
            // Right-associative; the exponent may carry its own unary minus.
            return Node::make_binary('^', base, parse_unary());
        }
        return base;
    }

    Expr parse_primary() {
        switch (cur_.kind) {
            case Token::Kind::number: {
                const double v = cur_.number;
                shift();
                return Node::make_number(v);
            }
            case Token::Kind::ident: {
                const std::string name = cur_.text;
                const Token saved = cur_;
                shift();
                if (cur_.kind == Token::Kind::lparen) {
                    if (!is_known_function(name))
                        throw ParseError("unknown function '" + name + "'", saved.line, saved.col);
                    shift();
                    Expr arg = parse_additive();
                    expect_rparen();
                    return Node::make_call(name, arg);
                }
                if (name == "pi") return Node::make_number(3.141592653589793238462643383279502884);
                return Node::make_variable(name);
            }
            case Token::Kind::lparen: {
                shift();
                Expr inner = parse_additive();
                expect_rparen();
                return inner;
            }
            default:
                throw ParseError("expected operand", cur_.line, cur_.col);
        }
    }

    void expect_rparen() {
        if (cur_.kind != Token::Kind::rparen)
            throw ParseError("expected ')'", cur_.line, cur_.col);
        shift();
    }

    void shift() { cur_ = lexer_.next(); }

    Lexer lexer_;
    Token cur_;
};

}  // namespace detail

inline Expr parse(const std::string& source) { return detail::Parser(source).parse_expression(); }

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

using Env = std::map<std::string, double>;

inline double eval(const Expr& e, const Env& env) {
    switch (e->kind) {
        case Node::Kind::number:
            return e->number;
        case Node::Kind::variable: {
            auto it = env.find(e->name);
            if (it == env.end()) throw UnboundVariable(e->name);
            return it->second;
        }
        case Node::Kind::unary_minus:
            return -eval(e->left, env);
        case Node::Kind::binary: {
            const double a = eval(e->left, env);
            const double b = eval(e->right, env);
            switch (e->op) {
                case '+': return a + b;
                case '-': return a - b;
                case '*': return a * b;
                case '/':
                    if (b == 0.0) throw DomainError("division by zero");
                    return a / b;
                case '^': {
                    const double v = std::pow(a, b);
                    if (std::isnan(v)) throw DomainError("invalid power");
                    return v;
                }
            }
            throw EvalError("corrupt expression node");
        }
        case Node::Kind::call: {
            const double a = eval(e->left, env);
            if (e->name == "sin") return std::sin(a);
            if (e->name == "cos") return std::cos(a);
            if (e->name == "exp") return std::exp(a);
            if (e->name == "log") {
                if (a <= 0.0) throw DomainError("log of non-positive value");
                return std::log(a);
            }
            if (e->name == "abs") return std::fabs(a);
            if (e->name == "sqrt") {
                if (a < 0.0) throw DomainError("sqrt of negative value");
                return std::sqrt(a);
            }
            if (e->name == "gamma") {
                const double v = gamma_fn(a);
                if (std::isnan(v)) throw DomainError("gamma at a pole");
                return v;
            }
            throw EvalError("unknown function '" + e->name + "'");
        }
    }
    throw EvalError("corrupt expression node");
}

// ---------------------------------------------------------------------------
// Printing (canonical, re-parseable)
// ---------------------------------------------------------------------------

namespace detail {

inline int precedence(const Node& n) {
    switch (n.kind) {
        case Node::Kind::binary:
            if (n.op == '+' || n.op == '-') return 1;
            if (n.op == '*' || n.op == '/') return 2;
            return 4;  // ^
        case Node::Kind::unary_minus:
            return 3;
        default:
            return 5;
    }
}

inline void print_rec(const Expr& e, std::ostringstream& out) {
    const int prec = precedence(*e);
    auto child = [&](const Expr& c, bool needs_paren) {
        if (needs_paren) out << '(';
        print_rec(c, out);
        if (needs_paren) out << ')';
    };
    switch (e->kind) {
        case Node::Kind::number: {
            std::ostringstream num;
            num.precision(17);
            num << e->number;
            std::string s = num.str();
            if (!s.empty() && s[0] == '-') {
                out << "(" << s << ")";
            } else {
                out << s;
            }
            return;
        }
        case Node::Kind::variable:
            out << e->name;
            return;
        case Node::Kind::unary_minus:
            out << '-';
            child(e->left, precedence(*e->left) < prec);
            return;
        case Node::Kind::binary: {
            const bool right_tighter = (e->op == '^');
            child(e->left, precedence(*e->left) < prec + (right_tighter ? 1 : 0));
            out << e->op;
            // Left-associative operators need parens around an equal-precedence rhs.
            child(e->right, precedence(*e->right) < prec + (right_tighter ? 0 : 1));
            return;
        }
        case Node::Kind::call:
            out << e->name << '(';
            print_rec(e->left, out);
            out << ')';
            return;
    }
}

}  // namespace detail

inline std::string print(const Expr& e) {
    std::ostringstream out;
    detail::print_rec(e, out);
    return out.str();
}

inline bool structurally_equal(const Expr& a, const Expr& b) {
    // Treat a negative literal and a negated positive literal as the same node.
    auto as_number = [](const Expr& e) -> std::optional<double> {
        if (e->kind == Node::Kind::number) return e->number;
        if (e->kind == Node::Kind::unary_minus && e->left->kind == Node::Kind::number)
            return -e->left->number;
        return std::nullopt;
    };
    if (auto na = as_number(a), nb = as_number(b); na && nb) return *na == *nb;
    if (a->kind != b->kind) return false;
    switch (a->kind) {
        case Node::Kind::number:
            return a->number == b->number;
        case Node::Kind::variable:
            return a->name == b->name;
        case Node::Kind::unary_minus:
            return structurally_equal(a->left, b->left);
        case Node::Kind::binary:
            return a->op == b->op && structurally_equal(a->left, b->left) &&
                   structurally_equal(a->right, b->right);
        case Node::Kind::call:
            return a->name == b->name && structurally_equal(a->left, b->left);
    }
    return false;
}

// ---------------------------------------------------------------------------
// Symbolic differentiation
// ---------------------------------------------------------------------------

namespace detail {

inline bool is_zero(const Expr& e) { return e->kind == Node::Kind::number && e->number == 0.0; }
inline bool is_one(const Expr& e) { return e->kind == Node::Kind::number && e->number == 1.0; }

inline Expr add(Expr a, Expr b) {
    if (is_zero(a)) return b;
    if (is_zero(b)) return a;
    return Node::make_binary('+', std::move(a), std::move(b));
}
inline Expr sub(Expr a, Expr b) {
    if (is_zero(b)) return a;
    if (is_zero(a)) return Node::make_unary_minus(std::move(b));
    return Node::make_binary('-', std::move(a), std::move(b));
}
inline Expr mul(Expr a, Expr b) {
    if (is_zero(a) || is_zero(b)) return Node::make_number(0.0);
    if (is_one(a)) return b;
    if (is_one(b)) return a;
    return Node::make_binary('*', std::move(a), std::move(b));
}
inline Expr div(Expr a, Expr b) {
    if (is_zero(a)) return Node::make_number(0.0);
    if (is_one(b)) return a;
    return Node::make_binary('/', std::move(a), std::move(b));
}

}  // namespace detail

inline Expr differentiate(const Expr& e, const std::string& var) {
    using namespace detail;
    switch (e->kind) {
        case Node::Kind::number:
            return Node::make_number(0.0);
        case Node::Kind::variable:
            return Node::make_number(e->name == var ? 1.0 : 0.0);
        case Node::Kind::unary_minus: {
            Expr d = differentiate(e->left, var);
            if (is_zero(d)) return d;
            return Node::make_unary_minus(d);
        }
        case Node::Kind::binary: {
            Expr da = differentiate(e->left, var);
            Expr db = differentiate(e->right, var);
            switch (e->op) {
                case '+': return add(da, db);
                case '-': return sub(da, db);
                case '*': return add(mul(da, e->right), mul(e->left, db));
                case '/':
                    return div(sub(mul(da, e->right), mul(e->left, db)),
                               Node::make_binary('^', e->right, Node::make_number(2.0)));
                case '^': {
                    if (e->right->kind == Node::Kind::number) {
                        // d(u^c) = c u^(c-1) u'
                        const double c = e->right->number;
                        if (c == 0.0) return Node::make_number(0.0);
                        Expr power = Node::make_binary('^', e->left, Node::make_number(c - 1.0));
                        return mul(Node::make_number(c), mul(power, da));
                    }
                    // d(u^v) = u^v (v' log u + v u'/u)
                    Expr logu = Node::make_call("log", e->left);
                    Expr inner = add(mul(db, logu), mul(e->right, div(da, e->left)));
                    return mul(Node::make_binary('^', e->left, e->right), inner);
                }
            }
            throw EvalError("corrupt expression node");
        }
        case Node::Kind::call: {
            Expr da = differentiate(e->left, var);
            if (is_zero(da)) return Node::make_number(0.0);
            Expr outer;
            if (e->name == "sin") {
                outer = Node::make_call("cos", e->left);
            } else if (e->name == "cos") {
                outer = Node::make_unary_minus(Node::make_call("sin", e->left));
            } else if (e->name == "exp") {
                outer = Node::make_call("exp", e->left);
            } else if (e->name == "log") {
                outer = div(Node::make_number(1.0), e->left);
            } else if (e->name == "sqrt") {
                outer = div(Node::make_number(0.5), Node::make_call("sqrt", e->left));
            } else if (e->name == "abs") {
                // d|u| = (u/|u|) u'; undefined at 0, which probes avoid a.s.
                outer = div(e->left, Node::make_call("abs", e->left));
            } else if (e->name == "gamma") {
                throw UnsupportedDerivative("derivative of gamma is not supported");
            } else {
                throw EvalError("unknown function '" + e->name + "'");
            }
            return mul(outer, da);
        }
    }
    throw EvalError("corrupt expression node");
}

}  // namespace svoc::expr
