#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "fedagg/errors.hpp"
#include "fedagg/orchestrator.hpp"

namespace fedagg::orch {

namespace {

constexpr const char* kCheckpointMagic = "fedagg-checkpoint 1";
constexpr const char* kAutoencoderMagic = "fedagg-autoencoder 1";

std::string hex(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

double parse_hex(const std::string& token) {
    char* end = nullptr;
    double v = std::strtod(token.c_str(), &end);
    if (end == token.c_str() || *end != '\0') throw IoError("checkpoint: bad number '" + token + "'");
    return v;
}

std::string expect_line(std::istream& is, const std::string& what) {
    std::string line;
    if (!std::getline(is, line)) throw IoError("checkpoint: unexpected end of file, expected " + what);
    return line;
}

// "params <activation> <k> w_0 .. w_{k-1}" then one line of hex values.
void write_params(std::ostream& os, const nn::ModelParams& p) {
    os << "params " << nn::to_string(p.spec.activation) << ' ' << p.spec.layer_widths.size();
    for (auto w : p.spec.layer_widths) os << ' ' << w;
    os << '\n';
    std::string line;
    for (std::size_t i = 0; i < p.parameter_count(); ++i) {
        if (i) line += ' ';
        line += hex(p.flat(i));
    }
    os << line << '\n';
}

nn::ModelParams read_params(std::istream& is) {
    std::istringstream header(expect_line(is, "params header"));
    std::string tag, activation;
    std::size_t k = 0;
    if (!(header >> tag >> activation >> k) || tag != "params") throw IoError("checkpoint: malformed params header");
    nn::ModelSpec spec;
    spec.activation = nn::parse_activation(activation);
    spec.layer_widths.resize(k);
    for (auto& w : spec.layer_widths)
        if (!(header >> w)) throw IoError("checkpoint: truncated layer widths");
    nn::ModelParams p = nn::zero_params(spec);
    std::istringstream values(expect_line(is, "parameter values"));
    std::string token;
    for (std::size_t i = 0; i < p.parameter_count(); ++i) {
        if (!(values >> token)) throw IoError("checkpoint: too few parameter values");
        p.flat(i) = parse_hex(token);
    }
    if (values >> token) throw IoError("checkpoint: too many parameter values");
    return p;
}

}  // namespace

void write_autoencoder(std::ostream& os, const ae::AutoencoderParams& autoencoder) {
    os << kAutoencoderMagic << '\n';
    write_params(os, autoencoder.encoder);
    write_params(os, autoencoder.decoder);
}

ae::AutoencoderParams read_autoencoder(std::istream& is) {
    if (expect_line(is, "autoencoder header") != kAutoencoderMagic) throw IoError("checkpoint: missing autoencoder block");
    ae::AutoencoderParams out;
    out.encoder = read_params(is);
    out.decoder = read_params(is);
    if (out.encoder.spec.output_width() != out.decoder.spec.input_width() ||
        out.decoder.spec.output_width() != out.encoder.spec.input_width())
        throw IoError("checkpoint: encoder and decoder widths do not match");
    return out;
}

void write_checkpoint(std::ostream& os, const Federation& fed, std::size_t epoch) {
    os << kCheckpointMagic << '\n' << "epoch " << epoch << '\n' << "nodes " << fed.net.size() << '\n';
    for (const auto& [id, desc] : fed.net.nodes())
        os << "node " << id.value << ' ' << (desc.parent ? std::to_string(desc.parent->value) : "-") << '\n';
    write_autoencoder(os, fed.autoencoder);
    for (const auto& [id, st] : fed.states) {
        os << "model " << id.value << '\n';
        write_params(os, st.model);
    }
    os << "end\n";
}

std::size_t read_checkpoint(std::istream& is, Federation& fed) {
    if (expect_line(is, "header") != kCheckpointMagic) throw IoError("not a fedagg checkpoint");
    std::size_t epoch = 0, count = 0;
    std::string tag;
    {
        std::istringstream ls(expect_line(is, "epoch"));
        if (!(ls >> tag >> epoch) || tag != "epoch") throw IoError("checkpoint: malformed epoch line");
    }
    {
        std::istringstream ls(expect_line(is, "node count"));
        if (!(ls >> tag >> count) || tag != "nodes") throw IoError("checkpoint: malformed node count");
    }
    if (count != fed.net.size()) throw IoError("checkpoint has a different number of nodes than the configuration");

    topo::TreeLayout layout;
    for (std::size_t i = 0; i < count; ++i) {
        std::istringstream ls(expect_line(is, "node line"));
        std::uint32_t id = 0;
        std::string parent;
        if (!(ls >> tag >> id >> parent) || tag != "node") throw IoError("checkpoint: malformed node line");
        topo::NodeId nid{id};
        if (!fed.net.contains(nid)) throw IoError("checkpoint names unknown node " + std::to_string(id));
        const auto& desc = fed.net.node(nid);
        topo::NodeLayout n{nid, desc.tier, std::nullopt, desc.model_spec};
        if (parent != "-") n.parent = topo::NodeId{static_cast<std::uint32_t>(std::stoul(parent))};
        layout.nodes.push_back(std::move(n));
    }
    topo::EecNet net = topo::build_tree(layout, true);
    ae::AutoencoderParams autoencoder = read_autoencoder(is);

    std::map<topo::NodeId, nn::ModelParams> models;
    for (std::size_t i = 0; i < count; ++i) {
        std::istringstream ls(expect_line(is, "model line"));
        std::uint32_t id = 0;
        if (!(ls >> tag >> id) || tag != "model") throw IoError("checkpoint: malformed model line");
        auto params = read_params(is);
        if (!(params.spec == net.node(topo::NodeId{id}).model_spec))
            throw IoError("checkpoint model for node " + std::to_string(id) + " has a different structure");
        models.emplace(topo::NodeId{id}, std::move(params));
    }
    if (expect_line(is, "end marker") != "end") throw IoError("checkpoint: missing end marker");

    fed.net = std::move(net);
    fed.autoencoder = autoencoder;
    for (auto& [id, st] : fed.states) {
        st.model = models.at(id);
        st.decoder = autoencoder.decoder;
        if (st.encoder) st.encoder = autoencoder.encoder;
    }
    init_phase(fed);
    return epoch;
}

void save_checkpoint(const std::filesystem::path& path, const Federation& fed, std::size_t epoch) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    write_checkpoint(os, fed, epoch);
    if (!os) throw IoError("failed writing " + path.string());
}

std::size_t load_checkpoint(const std::filesystem::path& path, Federation& fed) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    return read_checkpoint(is, fed);
}

}  // namespace fedagg::orch
