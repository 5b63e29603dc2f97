// Copyright (c) 2026, The ndft Authors
// SPDX-License-Identifier: Apache-2.0

#include "ndft/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <chrono>
#include <cstring>
#include <ctime>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#ifndef NDFT_VERSION
#define NDFT_VERSION "unknown"
#endif

namespace ndft {

namespace {

using nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

// ---------------------------------------------------------------------------
// Value formatting and parsing.

std::string fmt(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}
std::string fmt(std::size_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

template <class T>
std::string fmt_list(const std::vector<T>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ", ";
        if constexpr (std::is_same_v<T, std::string>) {
            s += v[i];
        } else {
            s += fmt(v[i]);
        }
    }
    return s;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s) {
    std::vector<std::string> out;
    if (trim(s).empty()) return out;
    std::size_t start = 0;
    while (true) {
        const auto comma = s.find(',', start);
        out.push_back(trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& why) {
    throw ConfigError(key + ": invalid value '" + value + "' (" + why + ")");
}

double to_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto t = trim(v);
    const auto r = std::from_chars(t.data(), t.data() + t.size(), out);
    if (r.ec != std::errc() || r.ptr != t.data() + t.size()) bad_value(key, v, "expected a number");
    return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto t = trim(v);
    const auto r = std::from_chars(t.data(), t.data() + t.size(), out);
    if (r.ec != std::errc() || r.ptr != t.data() + t.size()) bad_value(key, v, "expected a nonnegative integer");
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    const auto t = trim(v);
    if (t == "true" || t == "1" || t == "yes") return true;
    if (t == "false" || t == "0" || t == "no") return false;
    bad_value(key, v, "expected true or false");
}

std::vector<double> to_doubles(const std::string& key, const std::string& v) {
    std::vector<double> out;
    for (const auto& item : split_list(v)) out.push_back(to_double(key, item));
    return out;
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    for (const auto& item : split_list(v)) out.push_back(to_u64(key, item));
    return out;
}

// A config field: how to set it from text and how to print it.
struct Field {
    std::string key;
    std::function<void(const std::string& qualified, const std::string&)> set;
    std::function<std::string()> get;
};

Field num(std::string key, double& ref) {
    return {std::move(key), [&ref](const std::string& k, const std::string& v) { ref = to_double(k, v); },
            [&ref] { return fmt(ref); }};
}
Field count(std::string key, std::size_t& ref) {
    return {std::move(key), [&ref](const std::string& k, const std::string& v) { ref = to_u64(k, v); },
            [&ref] { return fmt(ref); }};
}
Field u64(std::string key, std::uint64_t& ref) {
    return {std::move(key), [&ref](const std::string& k, const std::string& v) { ref = to_u64(k, v); },
            [&ref] { return std::to_string(ref); }};
}
Field flag(std::string key, bool& ref) {
    return {std::move(key), [&ref](const std::string& k, const std::string& v) { ref = to_bool(k, v); },
            [&ref] { return fmt(ref); }};
}
Field nums(std::string key, std::vector<double>& ref) {
    return {std::move(key), [&ref](const std::string& k, const std::string& v) { ref = to_doubles(k, v); },
            [&ref] { return fmt_list(ref); }};
}
Field counts(std::string key, std::vector<std::size_t>& ref) {
    return {std::move(key), [&ref](const std::string& k, const std::string& v) { ref = to_sizes(k, v); },
            [&ref] { return fmt_list(ref); }};
}

using Sections = std::vector<std::pair<std::string, std::vector<Field>>>;

Sections fixed_sections(RunConfig& c) {
    TrainConfig& t = c.train;
    Sections s;
    s.push_back({"run", {num("grid_gamma", c.grid_gamma)}});
    s.push_back({"train",
                 {{"mode",
                   [&t](const std::string& k, const std::string& v) {
                       try {
                           t.mode = parse_loss_mode(trim(v));
                       } catch (const std::invalid_argument&) {
                           bad_value(k, v, "expected baseline, ndft, auxiliary or grad-reversal");
                       }
                   },
                   [&t] { return to_string(t.mode); }},
                  {"gammas", [&t](const std::string& k, const std::string& v) { t.gammas = to_doubles(k, v); },
                   [&t] { return fmt_list(t.resolved_gammas()); }},
                  num("default_gamma", t.default_gamma),
                  num("box_weight", t.box_weight),
                  count("batch_size", t.batch_size),
                  count("iterations", t.iterations),
                  count("pretrain_iterations", t.pretrain_iterations),
                  count("head_pretrain_cap", t.head_pretrain_cap),
                  num("tau", t.tau),
                  count("strengthen_cap", t.strengthen_cap),
                  num("strengthen_ema", t.strengthen_ema),
                  count("restart_period", t.restart_period),
                  count("restart_retrain_steps", t.restart_retrain_steps),
                  flag("restart_repretrain", t.restart_repretrain),
                  num("grl_factor", t.grl_factor),
                  count("eval_interval", t.eval_interval),
                  flag("wall_clock", t.wall_clock),
                  u64("seed", t.seed)}});
    s.push_back({"optim",
                 {num("learning_rate", t.optim.learning_rate), num("momentum", t.optim.momentum),
                  num("head_learning_rate", t.optim.head_learning_rate), count("decay_at", t.optim.decay_at),
                  num("decay_factor", t.optim.decay_factor)}});
    s.push_back({"eval",
                 {count("samples", t.eval.samples), num("iou_threshold", t.eval.iou_threshold),
                  count("chunk", t.eval.chunk)}});
    s.push_back({"arch",
                 {count("in_channels", t.arch.in_channels), counts("trunk_channels", t.arch.trunk_channels), count("pooled_blocks", t.arch.pooled_blocks),
                  count("head_channels", t.arch.head_channels), count("nuisance_hidden", t.arch.nuisance_hidden)}});
    s.push_back({"data",
                 {count("image_size", t.data.image_size),
                  count("num_classes", t.data.num_classes),
                  count("holdout", t.data.holdout),
                  count("clutter_blobs", t.data.clutter_blobs),
                  num("clutter_contrast", t.data.clutter_contrast),
                  num("noise_day", t.data.noise_day),
                  num("noise_night", t.data.noise_night),
                  num("min_box_area", t.data.min_box_area),
                  {"variant",
                   [&t](const std::string& k, const std::string& v) {
                       const auto x = trim(v);
                       if (x == "source") {
                           t.data.variant = SceneVariant::source;
                       } else if (x == "shifted") {
                           t.data.variant = SceneVariant::shifted;
                       } else {
                           bad_value(k, v, "expected source or shifted");
                       }
                   },
                   [&t] { return std::string(t.data.variant == SceneVariant::source ? "source" : "shifted"); }}}});
    ProbeOptions& p = c.probe;
    s.push_back({"probe",
                 {count("train_samples", p.train_samples), count("test_samples", p.test_samples),
                  count("hidden", p.hidden), count("batch_size", p.batch_size), count("max_steps", p.max_steps),
                  num("learning_rate", p.learning_rate), num("momentum", p.momentum),
                  flag("standardize", p.standardize)}});
    s.push_back({"transfer",
                 {count("iterations", c.transfer.iterations), num("learning_rate", c.transfer.learning_rate)}});
    return s;
}

std::vector<Field> nuisance_fields(NuisanceSpec& n) {
    return {{"levels", [&n](const std::string&, const std::string& v) { n.levels = split_list(v); },
             [&n] { return fmt_list(n.levels); }},
            {"effect",
             [&n](const std::string& k, const std::string& v) {
                 try {
                     n.effect = parse_effect(trim(v));
                 } catch (const ConfigError&) {
                     bad_value(k, v, "expected scale, rotation or brightness");
                 }
             },
             [&n] { return to_string(n.effect); }},
            nums("centers", n.centers),
            num("jitter", n.jitter),
            num("scene_strength", n.scene_strength)};
}

}  // namespace

// ---------------------------------------------------------------------------

RunConfig parse_config(std::string_view text) {
    boost::property_tree::ptree tree;
    std::istringstream in{std::string(text)};
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
    }
    RunConfig c;
    const auto defaults = default_nuisances();
    bool nuisances_given = false;
    std::vector<NuisanceSpec> nuisances;
    auto sections = fixed_sections(c);
    for (const auto& [key, value] : tree) {
        if (value.empty() && !value.data().empty()) throw ConfigError(key + ": key outside any section");
    }
    // The INI reader drops sections without keys, so the section order comes
    // from the headers themselves; an empty [nuisance.NAME] keeps its defaults.
    std::vector<std::string> order;
    {
        std::istringstream lines{std::string(text)};
        std::string line;
        while (std::getline(lines, line)) {
            const std::string t = trim(line);
            if (t.size() > 2 && t.front() == '[' && t.back() == ']') order.push_back(trim(t.substr(1, t.size() - 2)));
        }
    }
    const boost::property_tree::ptree empty;
    for (const auto& section : order) {
        const auto it = tree.find(section);
        const auto& body = it == tree.not_found() ? empty : it->second;
        std::vector<Field> dynamic;
        std::vector<Field>* fields = nullptr;
        if (section.rfind("nuisance.", 0) == 0) {
            const std::string name = section.substr(9);
            if (name.empty()) throw ConfigError(section + ": nuisance section needs a name");
            NuisanceSpec spec;
            spec.name = name;
            for (const auto& d : defaults) {
                if (d.name == name) spec = d;
            }
            if (!nuisances_given) nuisances.clear();
            nuisances_given = true;
            nuisances.push_back(std::move(spec));
            dynamic = nuisance_fields(nuisances.back());
            fields = &dynamic;
        } else {
            for (auto& [name, fs] : sections) {
                if (name == section) fields = &fs;
            }
            if (!fields) throw ConfigError(section + ": unknown section");
        }
        for (const auto& [key, value] : body) {
            const std::string qualified = section + "." + key;
            auto it = std::find_if(fields->begin(), fields->end(), [&](const Field& f) { return f.key == key; });
            if (it == fields->end()) throw ConfigError(qualified + ": unknown key");
            it->set(qualified, value.data());
        }
    }
    if (nuisances_given) c.train.data.nuisances = std::move(nuisances);
    c.train.validate();
    return c;
}

void set_config_value(RunConfig& config, std::string_view key, std::string_view value) {
    const std::string k(key);
    const auto dot = k.rfind('.');
    if (dot == std::string::npos || dot == 0) throw ConfigError(k + ": expected section.key");
    const std::string section = k.substr(0, dot);
    const std::string name = k.substr(dot + 1);
    std::vector<Field> fields;
    if (section.rfind("nuisance.", 0) == 0) {
        auto& list = config.train.data.nuisances;
        auto it = std::find_if(list.begin(), list.end(), [&](const NuisanceSpec& n) { return n.name == section.substr(9); });
        if (it == list.end()) throw ConfigError(k + ": unknown nuisance");
        fields = nuisance_fields(*it);
    } else {
        auto sections = fixed_sections(config);
        auto it = std::find_if(sections.begin(), sections.end(), [&](const auto& s) { return s.first == section; });
        if (it == sections.end()) throw ConfigError(k + ": unknown section");
        fields = std::move(it->second);
    }
    auto f = std::find_if(fields.begin(), fields.end(), [&](const Field& x) { return x.key == name; });
    if (f == fields.end()) throw ConfigError(k + ": unknown key");
    f->set(k, std::string(value));
    config.train.validate();
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string to_config_text(const RunConfig& config) {
    RunConfig c = config;
    std::ostringstream os;
    for (auto& [section, fields] : fixed_sections(c)) {
        os << '[' << section << "]\n";
        for (const auto& f : fields) os << f.key << " = " << f.get() << '\n';
        os << '\n';
    }
    for (auto& n : c.train.data.nuisances) {
        os << "[nuisance." << n.name << "]\n";
        for (const auto& f : nuisance_fields(n)) os << f.key << " = " << f.get() << '\n';
        os << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Checkpoints: magic, u32 version, u32 record count, then records of
// u32 kind, u32 name length, name, u64 payload length, payload.

namespace {

enum RecordKind : std::uint32_t { kTensor = 1, kF64 = 2, kU64 = 3, kText = 4 };

class Writer {
public:
    void u32(std::uint32_t v) { raw(&v, 4); }
    void u64(std::uint64_t v) { raw(&v, 8); }
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        bytes.insert(bytes.end(), b, b + n);
    }
    void record(RecordKind kind, const std::string& name, const std::vector<std::uint8_t>& payload) {
        u32(kind);
        u32(static_cast<std::uint32_t>(name.size()));
        raw(name.data(), name.size());
        u64(payload.size());
        raw(payload.data(), payload.size());
        ++count;
    }
    void tensor(const std::string& name, const Shape& shape, std::span<const double> data) {
        Writer p;
        p.u32(static_cast<std::uint32_t>(shape.size()));
        for (std::size_t d : shape) p.u32(static_cast<std::uint32_t>(d));
        for (double v : data) {
            const float f = static_cast<float>(v);
            p.raw(&f, 4);
        }
        record(kTensor, name, p.bytes);
    }
    void f64(const std::string& name, double v) {
        Writer p;
        p.raw(&v, 8);
        record(kF64, name, p.bytes);
    }
    void u64rec(const std::string& name, std::uint64_t v) {
        Writer p;
        p.u64(v);
        record(kU64, name, p.bytes);
    }
    void text(const std::string& name, const std::string& s) {
        record(kText, name, std::vector<std::uint8_t>(s.begin(), s.end()));
    }

    std::vector<std::uint8_t> bytes;
    std::uint32_t count = 0;
};

struct Record {
    RecordKind kind;
    std::vector<double> values;  // tensor data, or one f64
    Shape shape;
    std::uint64_t u = 0;
    std::string text;
};

class Reader {
public:
    Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}
    bool has(std::size_t n) const { return bytes_.size() - pos_ >= n; }
    std::size_t remaining() const { return bytes_.size() - pos_; }
    std::uint32_t u32() { return take<std::uint32_t>(); }
    std::uint64_t u64() { return take<std::uint64_t>(); }
    std::string str(std::size_t n) {
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    const std::uint8_t* here() const { return bytes_.data() + pos_; }
    void skip(std::size_t n) { pos_ += n; }

private:
    template <class T>
    T take() {
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof v);
        pos_ += sizeof v;
        return v;
    }
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

std::string rng_name(std::size_t stream) {
    static const char* names[] = {"data", "init", "restart", "eval"};
    return names[stream];
}

Rng* rng_slot(RngStreams& s, std::size_t i) {
    Rng* slots[] = {&s.data, &s.init, &s.restart, &s.eval};
    return slots[i];
}

}  // namespace

CheckpointError::CheckpointError(std::string record, const std::string& what)
    : IoError("checkpoint record " + record + ": " + what), record_(std::move(record)) {}

std::vector<std::uint8_t> encode_checkpoint(const RunConfig& config, const NdftModel& model, const TrainState& state) {
    Writer w;
    w.text("config", to_config_text(config));
    const auto groups = model.groups();
    for (const auto& g : groups) {
        for (const auto& p : g.params) w.tensor("param/" + g.name + "/" + p.name, p.tensor.shape(), p.tensor.data());
    }
    for (std::size_t gi = 0; gi < groups.size() && gi < state.optim.size(); ++gi) {
        const auto& s = state.optim[gi];
        const std::string base = "optim/" + groups[gi].name;
        w.f64(base + "/learning_rate", s.learning_rate);
        w.f64(base + "/momentum", s.momentum);
        for (std::size_t k = 0; k < s.velocity.size(); ++k) {
            w.tensor(base + "/velocity/" + groups[gi].params[k].name, groups[gi].params[k].tensor.shape(),
                     s.velocity[k]);
        }
    }
    w.u64rec("state/iteration", state.iteration);
    w.u64rec("state/restart_clock", state.restart_clock);
    w.u64rec("state/restarts", state.restarts);
    w.text("state/restart_iterations", fmt_list(state.restart_iterations));
    for (std::size_t i = 0; i < state.accuracy_ema.size(); ++i) {
        w.f64("state/accuracy_ema/" + std::to_string(i), state.accuracy_ema[i]);
    }
    const auto& ls = state.last_strength;
    w.u64rec("state/strength/inner_steps", ls.inner_steps);
    w.u64rec("state/strength/cap_exhausted", ls.cap_exhausted);
    for (std::size_t i = 0; i < ls.accuracy.size(); ++i) {
        w.f64("state/strength/accuracy/" + std::to_string(i), ls.accuracy[i]);
        w.u64rec("state/strength/steps/" + std::to_string(i), ls.steps.at(i));
    }
    RngStreams rs = state.rng;
    for (std::size_t i = 0; i < 4; ++i) {
        const auto st = rng_slot(rs, i)->state();
        for (std::size_t j = 0; j < st.size(); ++j) w.u64rec("rng/" + rng_name(i) + "/" + std::to_string(j), st[j]);
    }

    Writer out;
    out.raw(kCheckpointMagic, sizeof kCheckpointMagic);
    out.u32(kCheckpointVersion);
    out.u32(w.count);
    out.raw(w.bytes.data(), w.bytes.size());
    return out.bytes;
}

void save_checkpoint(const std::filesystem::path& path, const RunConfig& config, const NdftModel& model,
                     const TrainState& state) {
    const auto bytes = encode_checkpoint(config, model, state);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("cannot write checkpoint " + path.string());
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes);
    if (!r.has(16)) throw CheckpointError("header", "file shorter than the 16-byte header");
    if (std::memcmp(r.here(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
        throw CheckpointError("header", "bad magic bytes");
    }
    r.skip(sizeof kCheckpointMagic);
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw CheckpointError("header", "unsupported format version " + std::to_string(version) + " (expected " +
                                            std::to_string(kCheckpointVersion) + ")");
    }
    const std::uint32_t n = r.u32();
    std::map<std::string, Record> records;
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::string where = "#" + std::to_string(i);
        if (!r.has(8)) throw CheckpointError(where, "truncated record header");
        const auto kind = static_cast<RecordKind>(r.u32());
        const std::uint32_t name_len = r.u32();
        if (name_len > 4096 || !r.has(name_len + 8)) throw CheckpointError(where, "truncated or oversized name");
        const std::string name = r.str(name_len);
        const std::string label = where + " '" + name + "'";
        const std::uint64_t len = r.u64();
        if (len > r.remaining()) throw CheckpointError(label, "truncated payload");
        Record rec{kind, {}, {}, 0, {}};
        switch (kind) {
            case kTensor: {
                if (len < 4) throw CheckpointError(label, "tensor payload too short");
                const std::vector<std::uint8_t> payload(r.here(), r.here() + len);
                Reader pr(payload);
                const std::uint32_t ndim = pr.u32();
                if (ndim > 8 || !pr.has(4ull * ndim)) throw CheckpointError(label, "bad tensor rank");
                std::size_t total = 1;
                for (std::uint32_t d = 0; d < ndim; ++d) {
                    rec.shape.push_back(pr.u32());
                    total *= rec.shape.back();
                }
                if (pr.remaining() != 4 * total) throw CheckpointError(label, "tensor payload length mismatch");
                rec.values.resize(total);
                for (std::size_t k = 0; k < total; ++k) {
                    float f;
                    std::memcpy(&f, pr.here(), 4);
                    pr.skip(4);
                    rec.values[k] = f;
                }
                break;
            }
            case kF64: {
                if (len != 8) throw CheckpointError(label, "f64 payload must be 8 bytes");
                double v;
                std::memcpy(&v, r.here(), 8);
                rec.values = {v};
                break;
            }
            case kU64: {
                if (len != 8) throw CheckpointError(label, "u64 payload must be 8 bytes");
                std::memcpy(&rec.u, r.here(), 8);
                break;
            }
            case kText:
                rec.text.assign(reinterpret_cast<const char*>(r.here()), len);
                break;
            default:
                throw CheckpointError(label, "unknown record kind " + std::to_string(static_cast<std::uint32_t>(kind)));
        }
        r.skip(len);
        if (!records.emplace(name, std::move(rec)).second) throw CheckpointError(label, "duplicate record name");
    }
    if (r.remaining() != 0) throw CheckpointError("trailer", std::to_string(r.remaining()) + " unexpected bytes");

    auto get = [&](const std::string& name, RecordKind kind) -> const Record& {
        auto it = records.find(name);
        if (it == records.end()) throw CheckpointError("'" + name + "'", "missing");
        if (it->second.kind != kind) throw CheckpointError("'" + name + "'", "wrong record kind");
        return it->second;
    };

    RunConfig config;
    try {
        config = parse_config(get("config", kText).text);
    } catch (const ConfigError& e) {
        throw CheckpointError("'config'", e.what());
    }
    Rng scratch(0);
    NdftModel model(config.train.resolved_arch(), scratch);
    TrainState state;
    const auto groups = model.groups();
    for (const auto& g : groups) {
        for (auto p : g.params) {
            const std::string name = "param/" + g.name + "/" + p.name;
            const Record& rec = get(name, kTensor);
            if (rec.shape != p.tensor.shape()) throw CheckpointError("'" + name + "'", "shape mismatch");
            std::copy(rec.values.begin(), rec.values.end(), p.tensor.data().begin());
        }
    }
    for (const auto& g : groups) {
        const std::string base = "optim/" + g.name;
        SgdState s;
        s.learning_rate = get(base + "/learning_rate", kF64).values[0];
        s.momentum = get(base + "/momentum", kF64).values[0];
        for (const auto& p : g.params) {
            const Record& rec = get(base + "/velocity/" + p.name, kTensor);
            if (rec.shape != p.tensor.shape()) throw CheckpointError("'" + base + "/velocity/" + p.name + "'", "shape mismatch");
            s.velocity.push_back(rec.values);
        }
        state.optim.push_back(std::move(s));
    }
    state.iteration = get("state/iteration", kU64).u;
    state.restart_clock = get("state/restart_clock", kU64).u;
    state.restarts = get("state/restarts", kU64).u;
    for (const auto& item : split_list(get("state/restart_iterations", kText).text)) {
        state.restart_iterations.push_back(to_u64("state/restart_iterations", item));
    }
    const std::size_t k = model.num_nuisances();
    for (std::size_t i = 0; i < k; ++i) {
        state.accuracy_ema.push_back(get("state/accuracy_ema/" + std::to_string(i), kF64).values[0]);
    }
    auto& ls = state.last_strength;
    ls.inner_steps = get("state/strength/inner_steps", kU64).u;
    ls.cap_exhausted = get("state/strength/cap_exhausted", kU64).u != 0;
    if (records.count("state/strength/accuracy/0")) {
        for (std::size_t i = 0; i < k; ++i) {
            ls.accuracy.push_back(get("state/strength/accuracy/" + std::to_string(i), kF64).values[0]);
            ls.steps.push_back(get("state/strength/steps/" + std::to_string(i), kU64).u);
        }
    }
    for (std::size_t i = 0; i < 4; ++i) {
        std::array<std::uint64_t, 4> st{};
        for (std::size_t j = 0; j < 4; ++j) st[j] = get("rng/" + rng_name(i) + "/" + std::to_string(j), kU64).u;
        rng_slot(state.rng, i)->set_state(st);
    }
    state.split = make_split(config.train.data, config.train.data.holdout, config.train.seed);
    return {std::move(config), std::move(model), std::move(state)};
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

// ---------------------------------------------------------------------------
// Metrics.

namespace {

ordered_json to_json_value(const MetricsRecord& r) {
    ordered_json j;
    j["iteration"] = r.iteration;
    j["mode"] = r.mode;
    j["gammas"] = r.gammas;
    j["partition"] = r.partition;
    j["samples"] = r.samples;
    j["overall"] = r.overall;
    j["class_accuracy"] = r.class_accuracy;
    j["mean_iou"] = r.mean_iou;
    ordered_json domains = ordered_json::array();
    for (const auto& d : r.per_domain) {
        domains.push_back({{"combination", d.combination}, {"levels", d.levels}, {"count", d.count}, {"metric", d.metric}});
    }
    j["per_domain"] = domains;
    j["per_level"] = r.per_level;
    j["nuisance_accuracy"] = r.nuisance_accuracy;
    j["l_task_cls"] = r.l_task_cls;
    j["l_task_box"] = r.l_task_box;
    j["l_ne"] = r.l_ne;
    j["l_n"] = r.l_n;
    j["wall_clock_s"] = r.wall_clock_s;
    return j;
}

MetricsRecord from_json_value(const nlohmann::json& j) {
    MetricsRecord r;
    r.iteration = j.at("iteration").get<std::size_t>();
    r.mode = j.at("mode").get<std::string>();
    r.gammas = j.at("gammas").get<std::vector<double>>();
    r.partition = j.at("partition").get<std::string>();
    r.samples = j.at("samples").get<std::size_t>();
    r.overall = j.at("overall").get<double>();
    r.class_accuracy = j.at("class_accuracy").get<double>();
    r.mean_iou = j.at("mean_iou").get<double>();
    for (const auto& d : j.at("per_domain")) {
        r.per_domain.push_back({d.at("combination").get<std::size_t>(), d.at("levels").get<std::string>(),
                                d.at("count").get<std::size_t>(), d.at("metric").get<double>()});
    }
    r.per_level = j.at("per_level").get<std::vector<std::vector<double>>>();
    r.nuisance_accuracy = j.at("nuisance_accuracy").get<std::vector<double>>();
    r.l_task_cls = j.at("l_task_cls").get<double>();
    r.l_task_box = j.at("l_task_box").get<double>();
    r.l_ne = j.at("l_ne").get<std::vector<double>>();
    r.l_n = j.at("l_n").get<std::vector<double>>();
    r.wall_clock_s = j.at("wall_clock_s").get<double>();
    return r;
}

}  // namespace

std::string to_json_line(const MetricsRecord& record) { return to_json_value(record).dump(); }

MetricsRecord parse_metrics_line(std::string_view line) {
    try {
        return from_json_value(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("bad metrics line: ") + e.what());
    }
}

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read metrics " + path.string());
    std::vector<MetricsRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!trim(line).empty()) out.push_back(parse_metrics_line(line));
    }
    return out;
}

MetricsLog::MetricsLog(const std::filesystem::path& path, bool append)
    : path_(path), out_(path, append ? std::ios::app : std::ios::trunc) {
    if (!out_) throw IoError("cannot open metrics log " + path.string());
}

void MetricsLog::write(const MetricsRecord& record) {
    out_ << to_json_line(record) << '\n';
    out_.flush();
    if (!out_) throw IoError("write to metrics log " + path_.string() + " failed");
}

std::string metrics_csv(const std::vector<MetricsRecord>& records) {
    std::size_t k = 0;
    std::vector<std::size_t> level_counts;
    std::map<std::size_t, std::string> domains;
    for (const auto& r : records) {
        k = std::max({k, r.gammas.size(), r.l_ne.size(), r.nuisance_accuracy.size()});
        if (r.per_level.size() > level_counts.size()) level_counts.resize(r.per_level.size(), 0);
        for (std::size_t f = 0; f < r.per_level.size(); ++f) {
            level_counts[f] = std::max(level_counts[f], r.per_level[f].size());
        }
        for (const auto& d : r.per_domain) domains.emplace(d.combination, d.levels);
    }
    std::ostringstream os;
    os << "iteration,mode,partition,samples,overall,class_accuracy,mean_iou,l_task_cls,l_task_box,wall_clock_s";
    for (std::size_t i = 1; i <= k; ++i) os << ",gamma_" << i;
    for (std::size_t i = 1; i <= k; ++i) os << ",l_ne_" << i;
    for (std::size_t i = 1; i <= k; ++i) os << ",l_n_" << i;
    for (std::size_t i = 1; i <= k; ++i) os << ",nuisance_accuracy_" << i;
    for (std::size_t f = 0; f < level_counts.size(); ++f) {
        for (std::size_t l = 0; l < level_counts[f]; ++l) os << ",level_" << f + 1 << "_" << l;
    }
    for (const auto& [combo, label] : domains) os << ",domain_" << combo;
    os << '\n';
    auto cell = [&os](const std::vector<double>& v, std::size_t i) {
        os << ',';
        if (i < v.size()) os << fmt(v[i]);
    };
    for (const auto& r : records) {
        os << r.iteration << ',' << r.mode << ',' << r.partition << ',' << r.samples << ',' << fmt(r.overall) << ','
           << fmt(r.class_accuracy) << ',' << fmt(r.mean_iou) << ',' << fmt(r.l_task_cls) << ','
           << fmt(r.l_task_box) << ',' << fmt(r.wall_clock_s);
        for (std::size_t i = 0; i < k; ++i) cell(r.gammas, i);
        for (std::size_t i = 0; i < k; ++i) cell(r.l_ne, i);
        for (std::size_t i = 0; i < k; ++i) cell(r.l_n, i);
        for (std::size_t i = 0; i < k; ++i) cell(r.nuisance_accuracy, i);
        for (std::size_t f = 0; f < level_counts.size(); ++f) {
            for (std::size_t l = 0; l < level_counts[f]; ++l) {
                cell(f < r.per_level.size() ? r.per_level[f] : std::vector<double>{}, l);
            }
        }
        for (const auto& [combo, label] : domains) {
            os << ',';
            for (const auto& d : r.per_domain) {
                if (d.combination == combo) os << fmt(d.metric);
            }
        }
        os << '\n';
    }
    return os.str();
}

std::string probe_json(const std::vector<ProbeResult>& results, const DatasetConfig& data) {
    std::ostringstream os;
    for (const auto& p : results) {
        ordered_json j;
        j["nuisance"] = p.nuisance;
        j["name"] = p.nuisance < data.nuisances.size() ? data.nuisances[p.nuisance].name : "";
        j["accuracy"] = p.accuracy;
        j["chance"] = p.chance;
        j["leakage"] = p.leakage;
        j["steps"] = p.steps;
        j["final_loss"] = p.final_loss;
        j["non_convergent"] = p.non_convergent;
        os << j.dump() << '\n';
    }
    return os.str();
}

std::string grid_jsonl(const GridTable& table) {
    std::ostringstream os;
    for (const auto& c : table.cells) {
        for (const auto& r : c.runs) {
            ordered_json j;
            j["kind"] = "run";
            j["cell"] = c.label;
            j["subset"] = c.subset;
            j["seed"] = r.seed;
            j["failed"] = r.failed;
            j["error"] = r.error;
            RunConfig rc;
            rc.train = r.config;
            j["config"] = to_config_text(rc);
            if (!r.failed) {
                j["val_seen"] = to_json_value(r.val_seen);
                j["val_unseen"] = to_json_value(r.val_unseen);
                j["val_all"] = to_json_value(r.val_all);
            }
            os << j.dump() << '\n';
        }
        ordered_json j;
        j["kind"] = "cell";
        j["cell"] = c.label;
        j["subset"] = c.subset;
        j["failed"] = c.failed;
        if (!c.failed) {
            j["median_val_seen"] = c.seen;
            j["median_val_unseen"] = c.unseen;
            j["median_val_all"] = c.overall;
            j["median_per_level"] = c.per_level;
        }
        os << j.dump() << '\n';
    }
    return os.str();
}

std::string transfer_json(const std::string& label, const TransferResult& result) {
    ordered_json j;
    j["label"] = label;
    j["trained_parameters"] = result.trained_parameters;
    j["trunk_hash_before"] = result.trunk_hash_before;
    j["trunk_hash_after"] = result.trunk_hash_after;
    j["metrics"] = to_json_value(result.metrics);
    return j.dump() + "\n";
}

// ---------------------------------------------------------------------------

std::string version_string() { return std::string("ndft ") + NDFT_VERSION; }

RunManifest make_manifest(const RunConfig& config, std::vector<std::string> outputs) {
    RunManifest m;
    m.config_text = to_config_text(config);
    m.seed = config.train.seed;
    m.dataset_seed = config.train.seed;
    m.code_version = version_string();
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    m.start_time = buf;
    m.outputs = std::move(outputs);
    return m;
}

std::string to_json(const RunManifest& m) {
    ordered_json j;
    j["code_version"] = m.code_version;
    j["start_time"] = m.start_time;
    j["seed"] = m.seed;
    j["dataset_seed"] = m.dataset_seed;
    j["outputs"] = m.outputs;
    j["config"] = m.config_text;
    return j.dump(2) + "\n";
}

void write_manifest(const std::filesystem::path& path, const RunManifest& manifest) {
    if (std::filesystem::exists(path)) throw IoError("manifest " + path.string() + " already exists");
    std::ofstream out(path);
    out << to_json(manifest);
    out.flush();
    if (!out) throw IoError("cannot write manifest " + path.string());
}

}  // namespace ndft
