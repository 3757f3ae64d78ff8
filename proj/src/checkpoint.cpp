#include "cesrnn/checkpoint.hpp"

#include "cesrnn/errors.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace cesrnn::network {

namespace {

std::string hex(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

double parse_hex(const std::string& token) {
    char* end = nullptr;
    const double v = std::strtod(token.c_str(), &end);
    if (end == token.c_str() || *end != '\0') {
        throw StateError("checkpoint: bad number `" + token + "`");
    }
    return v;
}

class Reader {
public:
    explicit Reader(const std::string& text) : in_(text) {}

    std::string line() {
        std::string l;
        if (!std::getline(in_, l)) {
            throw StateError("checkpoint: unexpected end of file");
        }
        return l;
    }

    std::vector<std::string> words() {
        std::istringstream ws(line());
        std::vector<std::string> out;
        std::string w;
        while (ws >> w) {
            out.push_back(w);
        }
        return out;
    }

private:
    std::istringstream in_;
};

} // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
    std::ostringstream out;
    out << kCheckpointFormat << '\n';
    out << "[metadata] " << ck.metadata.entries().size() << '\n';
    for (const auto& [k, v] : ck.metadata.entries()) {
        out << k << " = " << v << '\n';
    }
    KeyValueConfig net;
    ck.model.config.write(net);
    net.set("context_series", ck.model.context_series);
    out << "[network] " << net.entries().size() << '\n';
    for (const auto& [k, v] : net.entries()) {
        out << k << " = " << v << '\n';
    }
    out << "[series] " << ck.model.series_ids.size() << '\n';
    for (const std::string& id : ck.model.series_ids) {
        out << id << '\n';
    }
    out << "[means] " << ck.exo_means.size() << '\n';
    for (const auto& [coin, means] : ck.exo_means) {
        out << coin << ' ' << means.size();
        for (double m : means) {
            out << ' ' << hex(m);
        }
        out << '\n';
    }
    auto& model = const_cast<ModelParameters&>(ck.model);
    const auto params = model.parameters();
    out << "[tensors] " << params.size() << '\n';
    for (const ad::Parameter* p : params) {
        out << p->name() << ' ' << p->rows() << ' ' << p->cols() << '\n';
        for (Eigen::Index r = 0; r < p->rows(); ++r) {
            for (Eigen::Index c = 0; c < p->cols(); ++c) {
                out << (c == 0 ? "" : " ") << hex(p->value()(r, c));
            }
            out << '\n';
        }
    }
    out << "[end]\n";
    return out.str();
}

Checkpoint deserialize_checkpoint(const std::string& text) {
    Reader in(text);
    if (in.line() != kCheckpointFormat) {
        throw StateError("checkpoint: unknown format tag (expected `" + std::string(kCheckpointFormat) + "`)");
    }
    auto section = [&](const char* name) {
        const auto w = in.words();
        if (w.size() != 2 || w[0] != name) {
            throw StateError(std::string("checkpoint: expected section ") + name);
        }
        return static_cast<std::size_t>(std::stoul(w[1]));
    };
    auto read_config = [&](std::size_t count) {
        std::string body;
        for (std::size_t i = 0; i < count; ++i) {
            body += in.line() + '\n';
        }
        return KeyValueConfig::parse(body, "checkpoint");
    };

    Checkpoint ck;
    ck.metadata = read_config(section("[metadata]"));
    const KeyValueConfig net = read_config(section("[network]"));
    const NetworkConfig config = NetworkConfig::read(net);
    const std::string context_series = net.get_string("context_series", "");

    std::vector<std::string> ids(section("[series]"));
    for (std::string& id : ids) {
        id = trim(in.line());
    }
    const std::size_t n_means = section("[means]");
    for (std::size_t i = 0; i < n_means; ++i) {
        const auto w = in.words();
        if (w.size() < 2 || w.size() != 2 + std::stoul(w[1])) {
            throw StateError("checkpoint: malformed means row");
        }
        std::vector<double> means;
        for (std::size_t k = 2; k < w.size(); ++k) {
            means.push_back(parse_hex(w[k]));
        }
        ck.exo_means[w[0]] = std::move(means);
    }

    ck.model = ModelParameters(config, ids, context_series);
    const std::size_t n_tensors = section("[tensors]");
    const auto params = ck.model.parameters();
    if (n_tensors != params.size()) {
        throw StateError("checkpoint: holds " + std::to_string(n_tensors) + " tensors, model needs " +
                         std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < n_tensors; ++i) {
        const auto head = in.words();
        if (head.size() != 3) {
            throw StateError("checkpoint: malformed tensor header");
        }
        ad::Parameter* p = ck.model.find(head[0]);
        if (p == nullptr) {
            throw StateError("checkpoint: unknown tensor `" + head[0] + "`");
        }
        if (std::stol(head[1]) != p->rows() || std::stol(head[2]) != p->cols()) {
            throw StateError("checkpoint: tensor `" + head[0] + "` has the wrong shape");
        }
        for (Eigen::Index r = 0; r < p->rows(); ++r) {
            const auto row = in.words();
            if (static_cast<Eigen::Index>(row.size()) != p->cols()) {
                throw StateError("checkpoint: tensor `" + head[0] + "` row has the wrong width");
            }
            for (Eigen::Index c = 0; c < p->cols(); ++c) {
                p->value()(r, c) = parse_hex(row[static_cast<std::size_t>(c)]);
            }
        }
    }
    if (trim(in.line()) != "[end]") {
        throw StateError("checkpoint: missing [end] marker");
    }
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw StateError("cannot write checkpoint " + path.string());
    }
    out << serialize_checkpoint(checkpoint);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw StateError("cannot read checkpoint " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return deserialize_checkpoint(buf.str());
}

} // namespace cesrnn::network
