#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tapinv/latency.hpp"
#include "tapinv/netcore.hpp"

namespace tapinv::io {

using json = nlohmann::json;

// Fields separated by commas, tabs or spaces; '#' starts a comment line.
struct TextRecord {
    int line = 0;
    std::vector<std::string> fields;
};

inline Error parse_error(const std::string& path, int line, const std::string& what)
{
    return Error(ErrorCode::ParseError, path + ":" + std::to_string(line) + ": " + what);
}

inline std::vector<TextRecord> read_records(std::istream& in, const std::string& path)
{
    std::vector<TextRecord> out;
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        if (!raw.empty() && raw.back() == '\r')
            raw.pop_back();
        const auto first = raw.find_first_not_of(" \t");
        if (first == std::string::npos || raw[first] == '#')
            continue;
        for (char& c : raw)
            if (c == ',' || c == '\t' || c == ';')
                c = ' ';
        std::istringstream ss(raw);
        TextRecord r;
        r.line = line;
        for (std::string f; ss >> f;)
            r.fields.push_back(f);
        out.push_back(std::move(r));
    }
    if (in.bad())
        throw Error(ErrorCode::ParseError, path + ": read failure");
    return out;
}

inline std::vector<TextRecord> read_records(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::ParseError, path + ": cannot open file");
    return read_records(in, path);
}

inline int to_int(const std::string& path, const TextRecord& r, std::size_t i, const char* name)
{
    const std::string& s = r.fields[i];
    std::size_t used = 0;
    long v = 0;
    try {
        v = std::stol(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
        throw parse_error(path, r.line, std::string(name) + " '" + s + "' is not an integer");
    return static_cast<int>(v);
}

inline double to_double(const std::string& path, const TextRecord& r, std::size_t i, const char* name)
{
    const std::string& s = r.fields[i];
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || !std::isfinite(v))
        throw parse_error(path, r.line, std::string(name) + " '" + s + "' is not a finite number");
    return v;
}

inline void expect_fields(const std::string& path, const TextRecord& r, std::size_t n, const char* layout)
{
    if (r.fields.size() != n)
        throw parse_error(path, r.line,
                          "expected " + std::to_string(n) + " fields (" + layout + "), got " +
                              std::to_string(r.fields.size()));
}

// link_id, tail, head, t0, capacity
inline std::vector<LinkSpec> parse_network(std::istream& in, const std::string& path)
{
    std::vector<LinkSpec> specs;
    std::map<int, int> seen;
    for (const auto& r : read_records(in, path)) {
        expect_fields(path, r, 5, "link_id, tail, head, t0, capacity");
        LinkSpec s;
        s.id = to_int(path, r, 0, "link_id");
        s.tail = to_int(path, r, 1, "tail");
        s.head = to_int(path, r, 2, "head");
        s.free_flow_time = to_double(path, r, 3, "t0");
        s.capacity = to_double(path, r, 4, "capacity");
        if (!(s.free_flow_time > 0.0))
            throw parse_error(path, r.line, "t0 must be > 0");
        if (!(s.capacity > 0.0))
            throw parse_error(path, r.line, "capacity must be > 0");
        if (s.tail == s.head)
            throw parse_error(path, r.line, "tail and head are the same node");
        if (auto it = seen.find(s.id); it != seen.end())
            throw parse_error(path, r.line, "link id " + std::to_string(s.id) + " already defined on line " +
                                                std::to_string(it->second));
        seen[s.id] = r.line;
        specs.push_back(s);
    }
    if (specs.empty())
        throw Error(ErrorCode::ParseError, path + ": no links");
    return specs;
}

inline Network load_network(const std::string& path, Connectivity check = Connectivity::weak)
{
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::ParseError, path + ": cannot open file");
    auto specs = parse_network(in, path);
    try {
        return Network(specs, check);
    } catch (const Error& e) {
        throw Error(e.code(), path + ": " + e.what());
    }
}

struct DemandTable {
    std::vector<std::pair<int, int>> pairs;
    std::vector<double> demands;
    std::vector<int> lines;
};

// origin, destination, demand
inline DemandTable parse_demand(std::istream& in, const std::string& path)
{
    DemandTable t;
    std::map<std::pair<int, int>, int> seen;
    for (const auto& r : read_records(in, path)) {
        expect_fields(path, r, 3, "origin, destination, demand");
        const int o = to_int(path, r, 0, "origin");
        const int d = to_int(path, r, 1, "destination");
        const double v = to_double(path, r, 2, "demand");
        if (o == d)
            throw parse_error(path, r.line, "origin equals destination");
        if (v < 0.0)
            throw parse_error(path, r.line, "demand must be >= 0");
        if (auto it = seen.find({o, d}); it != seen.end())
            throw parse_error(path, r.line, "OD pair (" + std::to_string(o) + ", " + std::to_string(d) +
                                                ") already listed on line " + std::to_string(it->second));
        seen[{o, d}] = r.line;
        t.pairs.emplace_back(o, d);
        t.demands.push_back(v);
        t.lines.push_back(r.line);
    }
    if (t.pairs.empty())
        throw Error(ErrorCode::ParseError, path + ": no OD pairs");
    return t;
}

inline DemandTable load_demand(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::ParseError, path + ": cannot open file");
    return parse_demand(in, path);
}

// OD pairs checked against the network, with line context on failure.
inline std::vector<ODPair> od_pairs(const Network& net, const DemandTable& t, const std::string& path)
{
    for (std::size_t i = 0; i < t.pairs.size(); ++i)
        for (int node : {t.pairs[i].first, t.pairs[i].second})
            if (!net.has_node(node))
                throw parse_error(path, t.lines[i], "node " + std::to_string(node) + " is not in the network");
    return make_od_pairs(net, t.pairs);
}

inline DemandVector demand_vector(const DemandTable& t)
{
    return DemandVector(Vector(Eigen::Map<const Vector>(t.demands.data(), static_cast<Eigen::Index>(t.demands.size()))));
}

struct FlowTable {
    FlowVector flows;
    std::vector<std::size_t> measured; // link indices listed in the file
};

// link_id, flow. Links missing from the file are unmeasured.
inline FlowTable parse_flows(std::istream& in, const std::string& path, const Network& net)
{
    FlowTable t;
    t.flows = FlowVector::Zero(static_cast<Eigen::Index>(net.num_links()));
    std::map<int, int> seen;
    for (const auto& r : read_records(in, path)) {
        expect_fields(path, r, 2, "link_id, flow");
        const int id = to_int(path, r, 0, "link_id");
        const double v = to_double(path, r, 1, "flow");
        if (v < 0.0)
            throw parse_error(path, r.line, "flow must be >= 0");
        const auto idx = net.link_index(id);
        if (!idx)
            throw parse_error(path, r.line, "link id " + std::to_string(id) + " is not in the network");
        if (auto it = seen.find(id); it != seen.end())
            throw parse_error(path, r.line, "link id " + std::to_string(id) + " already listed on line " +
                                                std::to_string(it->second));
        seen[id] = r.line;
        const std::size_t a = *idx;
        t.flows[static_cast<Eigen::Index>(a)] = v;
        t.measured.push_back(a);
    }
    if (t.measured.empty())
        throw Error(ErrorCode::ParseError, path + ": no flows");
    std::sort(t.measured.begin(), t.measured.end());
    return t;
}

inline FlowTable load_flows(const std::string& path, const Network& net)
{
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::ParseError, path + ": cannot open file");
    return parse_flows(in, path, net);
}

inline std::string format_number(double v)
{
    std::ostringstream ss;
    ss << std::setprecision(17) << v;
    return ss.str();
}

// Header lines are written as '# ' comments before the link_id, flow rows.
inline void write_flows(std::ostream& out, const Network& net, const FlowVector& flows,
                        const std::vector<std::string>& header)
{
    for (const auto& h : header)
        out << "# " << h << "\n";
    out << "# link_id, flow\n";
    for (std::size_t a = 0; a < net.num_links(); ++a)
        out << net.link(a).id << ", " << format_number(flows[static_cast<Eigen::Index>(a)]) << "\n";
}

inline json coefficients_to_json(const LatencyCoefficients& c)
{
    json j;
    j["degree"] = c.degree();
    j["beta"] = std::vector<double>(c.beta().data(), c.beta().data() + c.beta().size());
    return j;
}

inline LatencyCoefficients coefficients_from_json(const json& j, const std::string& where)
{
    if (!j.is_object() || !j.contains("beta") || !j["beta"].is_array())
        throw Error(ErrorCode::ParseError, where + ": expected {\"degree\": n, \"beta\": [...]}");
    for (const auto& [k, v] : j.items())
        if (k != "degree" && k != "beta")
            throw Error(ErrorCode::ParseError, where + ": unknown key '" + k + "'");
    std::vector<double> b;
    for (const auto& v : j["beta"]) {
        if (!v.is_number())
            throw Error(ErrorCode::ParseError, where + ": beta entries must be numbers");
        b.push_back(v.get<double>());
    }
    if (j.contains("degree")) {
        if (!j["degree"].is_number_integer())
            throw Error(ErrorCode::ParseError, where + ": degree must be an integer");
        if (j["degree"].get<int>() + 1 != static_cast<int>(b.size()))
            throw Error(ErrorCode::ParseError, where + ": degree " + std::to_string(j["degree"].get<int>()) +
                                                   " does not match " + std::to_string(b.size()) + " coefficients");
    }
    try {
        return LatencyCoefficients(Vector(Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()))));
    } catch (const Error& e) {
        throw Error(ErrorCode::ParseError, where + ": " + e.what());
    }
}

inline json read_json(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::ParseError, path + ": cannot open file");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::ParseError, path + ": " + e.what());
    }
}

inline LatencyCoefficients load_coefficients(const std::string& path)
{
    return coefficients_from_json(read_json(path), path);
}

inline std::vector<double> to_std(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

} // namespace tapinv::io
