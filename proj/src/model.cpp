#include "disagg/model.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "disagg/kvconfig.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace disagg {

// ---------------------------------------------------------------------------
// graph compilation
// ---------------------------------------------------------------------------

namespace detail {

namespace {

class Builder {
  public:
    explicit Builder(const ModelConfig& cfg) : cfg_(cfg) {}

    Graph compile() {
        int cur = add_input();

        LayerSpec first = cfg_.input_layer;
        if (cfg_.first_hidden_sigmoid) first.activation = Activation::logsg;
        cur = layer(first, cur, "input", /*defer_pool=*/false);

        std::vector<int> enc_out;
        for (size_t b = 0; b < cfg_.encoder_blocks.size(); ++b) {
            cur = block(Part::encoder, static_cast<int>(b),
                        cfg_.encoder_blocks[b], cur, &enc_out);
        }

        // representation; inner skips concatenate the recorded layer inputs
        std::vector<int> rep_in;
        for (size_t i = 0; i < cfg_.representation_layers.size(); ++i) {
            const std::string name = "rep.l" + std::to_string(i);
            const LayerSpec& spec = cfg_.representation_layers[i];
            if (spec.unpool_before > 1)
                cur = unpool(cur, spec.unpool_before, name);
            for (const InnerSkip& s : cfg_.inner_skips) {
                if (s.to_layer != static_cast<int>(i)) continue;
                if (s.from_layer < 0 || s.from_layer >= s.to_layer)
                    throw ConfigError("inner skip " + std::to_string(s.from_layer) +
                                      ">" + std::to_string(s.to_layer) +
                                      ": source must precede target");
                cur = concat(cur, rep_in[s.from_layer],
                             "inner skip " + std::to_string(s.from_layer) + ">" +
                                 std::to_string(s.to_layer));
            }
            rep_in.push_back(cur);
            LayerSpec body = spec;
            body.unpool_before = 1;
            cur = layer(body, cur, name, /*defer_pool=*/false);
        }
        for (const InnerSkip& s : cfg_.inner_skips)
            if (s.to_layer < 0 ||
                s.to_layer >= static_cast<int>(cfg_.representation_layers.size()))
                throw ConfigError("inner skip targets missing representation layer " +
                                  std::to_string(s.to_layer));

        for (size_t b = 0; b < cfg_.decoder_blocks.size(); ++b) {
            cur = block(Part::decoder, static_cast<int>(b),
                        cfg_.decoder_blocks[b], cur, &enc_out);
        }
        for (const OuterSkip& s : cfg_.outer_skips)
            if (s.decoder_block < 0 ||
                s.decoder_block >= static_cast<int>(cfg_.decoder_blocks.size()) ||
                s.encoder_block < 0 ||
                s.encoder_block >= static_cast<int>(cfg_.encoder_blocks.size()))
                throw ConfigError("outer skip enc" + std::to_string(s.encoder_block) +
                                  ">dec" + std::to_string(s.decoder_block) +
                                  " references a missing block");

        // output layer: 1 channel, logistic sigmoid, no BN/GN
        cur = conv(cur, 1, cfg_.output_kernel, 1, "out");
        cur = act(cur, Activation::logsg, "out");

        const GraphNode& last = g_.nodes[cur];
        if (last.length != cfg_.window)
            throw ConfigError(
                "pooling is not undone by unpooling: output length " +
                std::to_string(last.length) + " != window " +
                std::to_string(cfg_.window));
        return std::move(g_);
    }

  private:
    const ModelConfig& cfg_;
    Graph g_;

    const GraphNode& node(int i) const { return g_.nodes[i]; }

    int push(GraphNode n) {
        g_.nodes.push_back(std::move(n));
        return static_cast<int>(g_.nodes.size()) - 1;
    }

    int add_input() {
        GraphNode n;
        n.kind = GraphNode::Kind::input;
        n.channels = 1;
        n.length = cfg_.window;
        n.name = "x";
        if (cfg_.window < 1) throw ConfigError("window must be >= 1");
        return push(n);
    }

    int conv(int in, int out_ch, int k, int d, const std::string& name) {
        if (out_ch < 1) throw ConfigError(name + ": out_channels must be >= 1");
        if (k < 1 || k % 2 == 0)
            throw ConfigError(name + ": kernel_size must be odd and positive");
        if (d < 1) throw ConfigError(name + ": dilation must be >= 1");
        GraphNode n;
        n.kind = GraphNode::Kind::conv;
        n.in0 = in;
        n.param = static_cast<int>(g_.convs.size());
        n.channels = out_ch;
        n.length = node(in).length;
        n.name = name;
        g_.convs.push_back({out_ch, node(in).channels, k, d, name});
        return push(n);
    }

    int bn(int in, const std::string& name) {
        GraphNode n;
        n.kind = GraphNode::Kind::bn;
        n.in0 = in;
        n.param = static_cast<int>(g_.bns.size());
        n.channels = node(in).channels;
        n.length = node(in).length;
        n.name = name;
        g_.bns.push_back({n.channels, name});
        return push(n);
    }

    int act(int in, Activation a, const std::string& name) {
        GraphNode n;
        n.kind = GraphNode::Kind::act;
        n.in0 = in;
        n.act = a;
        n.channels = node(in).channels;
        n.length = node(in).length;
        n.name = name;
        return push(n);
    }

    int gn(int in, const std::string& name) {
        GraphNode n;
        n.kind = GraphNode::Kind::gn;
        n.in0 = in;
        n.channels = node(in).channels;
        n.length = node(in).length;
        n.name = name;
        return push(n);
    }

    int pool(int in, int factor, const std::string& name) {
        if (node(in).length % factor != 0)
            throw ConfigError(name + ": length " + std::to_string(node(in).length) +
                              " not divisible by pooling factor " +
                              std::to_string(factor));
        GraphNode n;
        n.kind = GraphNode::Kind::pool;
        n.in0 = in;
        n.factor = factor;
        n.aux = g_.pool_slots++;
        n.channels = node(in).channels;
        n.length = node(in).length / factor;
        n.name = name;
        return push(n);
    }

    int unpool(int in, int factor, const std::string& name) {
        GraphNode n;
        n.kind = GraphNode::Kind::unpool;
        n.in0 = in;
        n.factor = factor;
        n.channels = node(in).channels;
        n.length = node(in).length * factor;
        n.name = name;
        return push(n);
    }

    int concat(int a, int b, const std::string& link) {
        if (node(a).length != node(b).length)
            throw ConfigError(link + ": time lengths differ (" +
                              std::to_string(node(a).length) + " vs " +
                              std::to_string(node(b).length) + ")");
        GraphNode n;
        n.kind = GraphNode::Kind::concat;
        n.in0 = a;
        n.in1 = b;
        n.channels = node(a).channels + node(b).channels;
        n.length = node(a).length;
        n.name = link;
        return push(n);
    }

    int add(int a, int b, const std::string& link) {
        if (node(a).channels != node(b).channels)
            throw ConfigError(link + ": channel counts differ (" +
                              std::to_string(node(a).channels) + " vs " +
                              std::to_string(node(b).channels) + ")");
        if (node(a).length != node(b).length)
            throw ConfigError(link + ": time lengths differ (" +
                              std::to_string(node(a).length) + " vs " +
                              std::to_string(node(b).length) + ")");
        GraphNode n;
        n.kind = GraphNode::Kind::add;
        n.in0 = a;
        n.in1 = b;
        n.channels = node(a).channels;
        n.length = node(a).length;
        n.name = link;
        return push(n);
    }

    // conv -> BN -> activation -> GN (+ structural pool/unpool around it)
    int layer(const LayerSpec& s, int in, const std::string& name, bool defer_pool) {
        if (s.pool_after > 1 && s.unpool_before > 1)
            throw ConfigError(name + ": a layer cannot both pool and unpool");
        int cur = in;
        if (s.unpool_before > 1) cur = unpool(cur, s.unpool_before, name + ".unpool");
        cur = conv(cur, s.out_channels, s.kernel_size, s.dilation, name);
        if (s.has_bn) cur = bn(cur, name);
        cur = act(cur, s.activation, name);
        if (s.has_gn) cur = gn(cur, name);
        if (s.pool_after > 1 && !defer_pool) cur = pool(cur, s.pool_after, name + ".pool");
        return cur;
    }

    bool has_residual(Part part, int b) const {
        return std::any_of(cfg_.residuals.begin(), cfg_.residuals.end(),
                           [&](const ResidualLink& r) {
                               return r.part == part && r.block == b;
                           });
    }

    int block(Part part, int b, const std::vector<LayerSpec>& layers, int in,
              std::vector<int>* enc_out) {
        const std::string prefix = (part == Part::encoder ? "enc" : "dec") +
                                   std::to_string(b);
        if (layers.empty()) throw ConfigError(prefix + ": empty block");

        int cur = in;
        if (part == Part::decoder) {
            if (layers.front().unpool_before > 1)
                cur = unpool(cur, layers.front().unpool_before, prefix + ".unpool");
            for (const OuterSkip& s : cfg_.outer_skips) {
                if (s.decoder_block != b) continue;
                if (s.encoder_block < 0 ||
                    s.encoder_block >= static_cast<int>(enc_out->size()))
                    throw ConfigError("outer skip enc" +
                                      std::to_string(s.encoder_block) + ">dec" +
                                      std::to_string(b) +
                                      " references a missing encoder block");
                cur = concat(cur, (*enc_out)[s.encoder_block],
                             "outer skip enc" + std::to_string(s.encoder_block) +
                                 ">dec" + std::to_string(b));
            }
        }

        const bool residual = has_residual(part, b);
        int first_out = -1;
        int deferred_pool = 1;
        for (size_t i = 0; i < layers.size(); ++i) {
            LayerSpec spec = layers[i];
            if (part == Part::decoder && i == 0) spec.unpool_before = 1;
            const bool last = i + 1 == layers.size();
            // the trailing pool applies after the residual add and after the
            // block output is recorded as a skip source
            const bool defer = last && part == Part::encoder;
            cur = layer(spec, cur, prefix + ".l" + std::to_string(i),
                        defer || (last && residual));
            if (i == 0) first_out = cur;
            if (last && (defer || residual)) deferred_pool = spec.pool_after;
        }
        if (residual)
            cur = add(first_out, cur, "residual " + prefix);
        if (part == Part::encoder) enc_out->push_back(cur);
        if (deferred_pool > 1) cur = pool(cur, deferred_pool, prefix + ".pool");
        return cur;
    }
};

}  // namespace

Graph compile_graph(const ModelConfig& cfg) { return Builder(cfg).compile(); }

}  // namespace detail

// ---------------------------------------------------------------------------
// presets
// ---------------------------------------------------------------------------

namespace {

LayerSpec conv_spec(int channels, int kernel, int dilation) {
    LayerSpec s;
    s.out_channels = channels;
    s.kernel_size = kernel;
    s.dilation = dilation;
    return s;
}

}  // namespace

ModelConfig ModelConfig::desk_preset(int window) {
    ModelConfig cfg;
    cfg.window = window;
    // desk-scale runs see few optimizer steps per epoch; a faster EMA keeps
    // the inference statistics usable from the first validation pass on
    cfg.bn_momentum = 0.9;
    int di = 0;
    const auto next_d = [&di] {
        static const int cycle[4] = {1, 2, 4, 8};
        return cycle[di++ % 4];
    };
    cfg.input_layer = conv_spec(16, 3, next_d());
    for (int b = 0; b < 4; ++b) {
        std::vector<LayerSpec> blk;
        for (int i = 0; i < 2; ++i) blk.push_back(conv_spec(16 << b, 3, next_d()));
        blk.back().pool_after = 2;
        cfg.encoder_blocks.push_back(std::move(blk));
        cfg.residuals.push_back({Part::encoder, b});
    }
    for (int i = 0; i < 2; ++i)
        cfg.representation_layers.push_back(conv_spec(256, 3, next_d()));
    cfg.inner_skips.push_back({0, 1});
    for (int b = 0; b < 4; ++b) {
        std::vector<LayerSpec> blk;
        for (int i = 0; i < 2; ++i) blk.push_back(conv_spec(128 >> b, 3, next_d()));
        blk.front().unpool_before = 2;
        cfg.decoder_blocks.push_back(std::move(blk));
        cfg.residuals.push_back({Part::decoder, b});
        cfg.outer_skips.push_back({3 - b, b});
    }
    cfg.output_kernel = 1;
    return cfg;
}

ModelConfig ModelConfig::paper_preset(int window) {
    // 46 conv layers: input + 5x4 encoding + 4 representation + 5x4 decoding
    // + output. Base width 64 doubling per block lands near the 41M
    // trainable-parameter mark. Pool factors 2,2,2,2,3 divide 10800 evenly.
    ModelConfig cfg;
    cfg.window = window;
    const int base = 64;
    const int pools[5] = {2, 2, 2, 2, 3};
    int di = 0;
    const auto next_d = [&di] {
        static const int cycle[4] = {1, 2, 4, 8};
        return cycle[di++ % 4];
    };
    cfg.input_layer = conv_spec(base, 3, next_d());
    for (int b = 0; b < 5; ++b) {
        std::vector<LayerSpec> blk;
        for (int i = 0; i < 4; ++i) blk.push_back(conv_spec(base << b, 3, next_d()));
        blk.back().pool_after = pools[b];
        cfg.encoder_blocks.push_back(std::move(blk));
        cfg.residuals.push_back({Part::encoder, b});
    }
    for (int i = 0; i < 4; ++i)
        cfg.representation_layers.push_back(conv_spec(base << 4, 3, next_d()));
    cfg.inner_skips.push_back({0, 2});
    cfg.inner_skips.push_back({1, 3});
    for (int b = 0; b < 5; ++b) {
        const int width = b < 4 ? (base << (3 - b)) : base;
        std::vector<LayerSpec> blk;
        for (int i = 0; i < 4; ++i) blk.push_back(conv_spec(width, 3, next_d()));
        blk.front().unpool_before = pools[4 - b];
        cfg.decoder_blocks.push_back(std::move(blk));
        cfg.residuals.push_back({Part::decoder, b});
        cfg.outer_skips.push_back({4 - b, b});
    }
    cfg.output_kernel = 1;
    return cfg;
}

ModelConfig ModelConfig::preset(const std::string& name, int window) {
    if (name == "desk") return desk_preset(window > 0 ? window : 512);
    if (name == "paper") return paper_preset(window > 0 ? window : 10800);
    throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
}

// ---------------------------------------------------------------------------
// config serialization
// ---------------------------------------------------------------------------

namespace {

std::string format_layer(const LayerSpec& s) {
    std::ostringstream os;
    os << 'c' << s.out_channels << " k" << s.kernel_size << " d" << s.dilation;
    if (s.activation == Activation::logsg) os << " logsg";
    if (!s.has_bn) os << " nobn";
    if (!s.has_gn) os << " nogn";
    if (s.pool_after > 1) os << " pool" << s.pool_after;
    if (s.unpool_before > 1) os << " unpool" << s.unpool_before;
    return os.str();
}

int parse_tagged_int(const std::string& tok, size_t tag_len, const std::string& where) {
    try {
        size_t pos = 0;
        const int v = std::stoi(tok.substr(tag_len), &pos);
        if (pos != tok.size() - tag_len) throw std::invalid_argument(tok);
        return v;
    } catch (...) {
        throw ConfigError(where + ": bad layer token '" + tok + "'");
    }
}

LayerSpec parse_layer(const std::string& desc, const std::string& where) {
    LayerSpec s;
    std::istringstream is(desc);
    std::string tok;
    bool saw_channels = false;
    while (is >> tok) {
        if (tok.rfind("unpool", 0) == 0)
            s.unpool_before = parse_tagged_int(tok, 6, where);
        else if (tok.rfind("pool", 0) == 0)
            s.pool_after = parse_tagged_int(tok, 4, where);
        else if (tok == "logsg")
            s.activation = Activation::logsg;
        else if (tok == "lrelu")
            s.activation = Activation::lrelu;
        else if (tok == "nobn")
            s.has_bn = false;
        else if (tok == "nogn")
            s.has_gn = false;
        else if (tok[0] == 'c') {
            s.out_channels = parse_tagged_int(tok, 1, where);
            saw_channels = true;
        } else if (tok[0] == 'k')
            s.kernel_size = parse_tagged_int(tok, 1, where);
        else if (tok[0] == 'd')
            s.dilation = parse_tagged_int(tok, 1, where);
        else
            throw ConfigError(where + ": unknown layer token '" + tok + "'");
    }
    if (!saw_channels) throw ConfigError(where + ": layer needs a channel count");
    return s;
}

std::string format_layers(const std::vector<LayerSpec>& layers) {
    std::string out;
    for (size_t i = 0; i < layers.size(); ++i) {
        if (i) out += " | ";
        out += format_layer(layers[i]);
    }
    return out;
}

std::vector<LayerSpec> parse_layers(const std::string& text, const std::string& where) {
    std::vector<LayerSpec> out;
    std::string part;
    std::istringstream is(text);
    while (std::getline(is, part, '|')) {
        // skip blank segments so an empty value means "no layers"
        if (part.find_first_not_of(" \t") == std::string::npos) continue;
        out.push_back(parse_layer(part, where));
    }
    return out;
}

}  // namespace

std::string config_to_kv(const ModelConfig& cfg) {
    KvDoc doc;
    doc.set_int("model.window", cfg.window);
    doc.set_int("model.output_kernel", cfg.output_kernel);
    doc.set_bool("model.first_hidden_sigmoid", cfg.first_hidden_sigmoid);
    doc.set_double("model.lrelu_alpha", cfg.lrelu_alpha);
    doc.set_double("model.gn_sigma", cfg.gn_sigma);
    doc.set_double("model.bn_epsilon", cfg.bn_epsilon);
    doc.set_double("model.bn_momentum", cfg.bn_momentum);
    doc.set("model.input_layer", format_layer(cfg.input_layer));

    doc.set_int("encoder.blocks", static_cast<long>(cfg.encoder_blocks.size()));
    for (size_t b = 0; b < cfg.encoder_blocks.size(); ++b)
        doc.set("encoder.block" + std::to_string(b),
                format_layers(cfg.encoder_blocks[b]));

    doc.set("representation.layers", format_layers(cfg.representation_layers));

    doc.set_int("decoder.blocks", static_cast<long>(cfg.decoder_blocks.size()));
    for (size_t b = 0; b < cfg.decoder_blocks.size(); ++b)
        doc.set("decoder.block" + std::to_string(b),
                format_layers(cfg.decoder_blocks[b]));

    std::string outer, inner, res;
    for (const OuterSkip& s : cfg.outer_skips) {
        if (!outer.empty()) outer += ' ';
        outer += std::to_string(s.encoder_block) + ">" + std::to_string(s.decoder_block);
    }
    for (const InnerSkip& s : cfg.inner_skips) {
        if (!inner.empty()) inner += ' ';
        inner += std::to_string(s.from_layer) + ">" + std::to_string(s.to_layer);
    }
    for (const ResidualLink& r : cfg.residuals) {
        if (!res.empty()) res += ' ';
        res += (r.part == Part::encoder ? "enc" : "dec") + std::to_string(r.block);
    }
    doc.set("links.outer_skips", outer);
    doc.set("links.inner_skips", inner);
    doc.set("links.residuals", res);
    return doc.str();
}

namespace {

std::pair<int, int> parse_link(const std::string& tok, const std::string& where) {
    const auto gt = tok.find('>');
    if (gt == std::string::npos)
        throw ConfigError(where + ": expected 'a>b', got '" + tok + "'");
    try {
        return {std::stoi(tok.substr(0, gt)), std::stoi(tok.substr(gt + 1))};
    } catch (...) {
        throw ConfigError(where + ": bad link '" + tok + "'");
    }
}

}  // namespace

ModelConfig config_from_kv(const std::string& text) {
    const KvDoc doc = KvDoc::parse(text);
    ModelConfig cfg;
    cfg.window = static_cast<int>(doc.get_int("model.window"));
    cfg.output_kernel = static_cast<int>(doc.get_int("model.output_kernel"));
    cfg.first_hidden_sigmoid = doc.get_bool("model.first_hidden_sigmoid");
    cfg.lrelu_alpha = doc.get_double("model.lrelu_alpha");
    cfg.gn_sigma = doc.get_double("model.gn_sigma");
    cfg.bn_epsilon = doc.get_double("model.bn_epsilon");
    cfg.bn_momentum = doc.get_double("model.bn_momentum");
    cfg.input_layer = parse_layer(doc.get("model.input_layer"), "model.input_layer");

    const long enc = doc.get_int("encoder.blocks");
    for (long b = 0; b < enc; ++b) {
        const std::string key = "encoder.block" + std::to_string(b);
        cfg.encoder_blocks.push_back(parse_layers(doc.get(key), key));
    }
    cfg.representation_layers =
        parse_layers(doc.get_or("representation.layers", ""), "representation.layers");
    const long dec = doc.get_int("decoder.blocks");
    for (long b = 0; b < dec; ++b) {
        const std::string key = "decoder.block" + std::to_string(b);
        cfg.decoder_blocks.push_back(parse_layers(doc.get(key), key));
    }

    std::istringstream outer(doc.get_or("links.outer_skips", ""));
    std::string tok;
    while (outer >> tok) {
        const auto [a, b] = parse_link(tok, "links.outer_skips");
        cfg.outer_skips.push_back({a, b});
    }
    std::istringstream inner(doc.get_or("links.inner_skips", ""));
    while (inner >> tok) {
        const auto [a, b] = parse_link(tok, "links.inner_skips");
        cfg.inner_skips.push_back({a, b});
    }
    std::istringstream res(doc.get_or("links.residuals", ""));
    while (res >> tok) {
        if (tok.rfind("enc", 0) == 0)
            cfg.residuals.push_back(
                {Part::encoder, parse_tagged_int(tok, 3, "links.residuals")});
        else if (tok.rfind("dec", 0) == 0)
            cfg.residuals.push_back(
                {Part::decoder, parse_tagged_int(tok, 3, "links.residuals")});
        else
            throw ConfigError("links.residuals: expected encN or decN, got '" +
                              tok + "'");
    }
    return cfg;
}

size_t count_trainable_parameters(const ModelConfig& cfg) {
    const detail::Graph g = detail::compile_graph(cfg);
    size_t count = 0;
    for (const auto& c : g.convs)
        count += static_cast<size_t>(c.out_ch) * c.in_ch * c.k + c.out_ch;
    for (const auto& b : g.bns) count += 2 * static_cast<size_t>(b.channels);
    return count;
}

template <typename T>
Tensor3<T> init_glorot(int fan_out_channels, int fan_in_channels,
                       int kernel_size, Rng& rng) {
    const double fan_in = static_cast<double>(fan_in_channels) * kernel_size;
    const double fan_out = static_cast<double>(fan_out_channels) * kernel_size;
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Tensor3<T> t(fan_out_channels, fan_in_channels, kernel_size);
    for (T& v : t.data) v = static_cast<T>(rng.uniform(-limit, limit));
    return t;
}

template Tensor3<float> init_glorot<float>(int, int, int, Rng&);
template Tensor3<double> init_glorot<double>(int, int, int, Rng&);

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

template <typename T>
void Model<T>::allocate_params(uint64_t seed) {
    Rng rng(seed);
    convs_.clear();
    bns_.clear();
    for (const auto& c : graph_.convs) {
        ConvLayer l;
        l.name = c.name;
        l.p.kernel = init_glorot<T>(c.out_ch, c.in_ch, c.k, rng);
        l.p.bias.assign(c.out_ch, T(0));
        l.p.dilation = c.dilation;
        l.grad_kernel = Tensor3<T>(c.out_ch, c.in_ch, c.k);
        l.grad_bias.assign(c.out_ch, T(0));
        convs_.push_back(std::move(l));
    }
    for (const auto& b : graph_.bns) {
        BnLayer l;
        l.name = b.name;
        l.p.gamma.assign(b.channels, T(1));
        l.p.beta.assign(b.channels, T(0));
        l.p.running_mean.assign(b.channels, T(0));
        l.p.running_var.assign(b.channels, T(1));
        l.p.epsilon = static_cast<T>(cfg_.bn_epsilon);
        l.p.momentum = static_cast<T>(cfg_.bn_momentum);
        l.grad_gamma.assign(b.channels, T(0));
        l.grad_beta.assign(b.channels, T(0));
        bns_.push_back(std::move(l));
    }
    pool_caches_.resize(graph_.pool_slots);
}

template <typename T>
Model<T> Model<T>::build(const ModelConfig& cfg, uint64_t seed) {
    Model m;
    m.cfg_ = cfg;
    m.graph_ = detail::compile_graph(cfg);
    m.allocate_params(seed);
    m.rng_ = Rng(seed ^ 0x6a09e667f3bcc909ULL);
    m.meta.seed = seed;
    return m;
}

template <typename T>
size_t Model<T>::parameter_count() const {
    size_t count = 0;
    for (const auto& c : convs_) count += c.p.kernel.size() + c.p.bias.size();
    for (const auto& b : bns_) count += b.p.gamma.size() + b.p.beta.size();
    return count;
}

template <typename T>
Tensor3<T> Model<T>::forward(const Tensor3<T>& x, Phase phase) {
    if (x.channels != 1)
        throw ShapeError("forward: input must have exactly 1 channel");
    if (x.length != cfg_.window)
        throw ShapeError("forward: input length " + std::to_string(x.length) +
                         " != window " + std::to_string(cfg_.window));

    using Kind = detail::GraphNode::Kind;
    node_out_.assign(graph_.nodes.size(), Tensor3<T>());
    node_grad_.assign(graph_.nodes.size(), Tensor3<T>());

    for (size_t i = 0; i < graph_.nodes.size(); ++i) {
        const detail::GraphNode& n = graph_.nodes[i];
        switch (n.kind) {
            case Kind::input:
                node_out_[i] = x;
                break;
            case Kind::conv:
                node_out_[i] = conv1d_forward(node_out_[n.in0], convs_[n.param].p);
                break;
            case Kind::bn:
                node_out_[i] = batchnorm_forward(node_out_[n.in0], bns_[n.param].p,
                                                 phase, &bns_[n.param].cache);
                break;
            case Kind::act:
                node_out_[i] =
                    n.act == Activation::lrelu
                        ? leaky_relu_forward(node_out_[n.in0],
                                             static_cast<T>(cfg_.lrelu_alpha))
                        : logistic_sigmoid_forward(node_out_[n.in0]);
                break;
            case Kind::gn:
                node_out_[i] = gaussian_noise(node_out_[n.in0],
                                              static_cast<T>(cfg_.gn_sigma), phase,
                                              rng_);
                break;
            case Kind::pool:
                node_out_[i] =
                    max_pool_forward(node_out_[n.in0], n.factor, pool_caches_[n.aux]);
                break;
            case Kind::unpool:
                node_out_[i] = unpool_forward(node_out_[n.in0], n.factor);
                break;
            case Kind::concat:
                node_out_[i] = concat_channels(node_out_[n.in0], node_out_[n.in1]);
                break;
            case Kind::add:
                node_out_[i] = add_elementwise(node_out_[n.in0], node_out_[n.in1]);
                break;
        }
    }
    have_forward_ = true;
    forward_phase_ = phase;
    return node_out_.back();
}

template <typename T>
Tensor3<T>& Model<T>::grad_buf(int node) {
    Tensor3<T>& g = node_grad_[node];
    if (g.batch == 0) {
        const Tensor3<T>& out = node_out_[node];
        g = Tensor3<T>(out.batch, out.channels, out.length);
    }
    return g;
}

namespace {

template <typename T>
void accumulate(Tensor3<T>& dst, const Tensor3<T>& src) {
    for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace

template <typename T>
void Model<T>::backward(const Tensor3<T>& grad_posterior) {
    if (!have_forward_ || forward_phase_ != Phase::train)
        throw StateError("backward requires a preceding train-mode forward pass");
    if (!grad_posterior.same_shape(node_out_.back()))
        throw ShapeError("backward: gradient shape does not match the posterior");

    using Kind = detail::GraphNode::Kind;
    node_grad_.assign(graph_.nodes.size(), Tensor3<T>());
    node_grad_.back() = grad_posterior;

    for (int i = static_cast<int>(graph_.nodes.size()) - 1; i >= 0; --i) {
        const detail::GraphNode& n = graph_.nodes[i];
        if (node_grad_[i].batch == 0) continue;  // node feeds nothing downstream
        const Tensor3<T>& g = node_grad_[i];
        switch (n.kind) {
            case Kind::input:
                break;
            case Kind::conv:
                conv1d_backward(node_out_[n.in0], convs_[n.param].p, g,
                                grad_buf(n.in0), convs_[n.param].grad_kernel,
                                convs_[n.param].grad_bias);
                break;
            case Kind::bn:
                batchnorm_backward(node_out_[n.in0], bns_[n.param].p,
                                   bns_[n.param].cache, g, grad_buf(n.in0),
                                   bns_[n.param].grad_gamma,
                                   bns_[n.param].grad_beta);
                break;
            case Kind::act:
                if (n.act == Activation::lrelu)
                    accumulate(grad_buf(n.in0),
                               leaky_relu_backward(node_out_[n.in0],
                                                   static_cast<T>(cfg_.lrelu_alpha), g));
                else
                    accumulate(grad_buf(n.in0),
                               logistic_sigmoid_backward(node_out_[i], g));
                break;
            case Kind::gn:
                accumulate(grad_buf(n.in0), g);
                break;
            case Kind::pool:
                accumulate(grad_buf(n.in0),
                           max_pool_backward<T>(pool_caches_[n.aux], g));
                break;
            case Kind::unpool:
                accumulate(grad_buf(n.in0), unpool_backward(n.factor, g));
                break;
            case Kind::concat:
                concat_channels_backward(g, graph_.nodes[n.in0].channels,
                                         grad_buf(n.in0), grad_buf(n.in1));
                break;
            case Kind::add:
                accumulate(grad_buf(n.in0), g);
                accumulate(grad_buf(n.in1), g);
                break;
        }
    }
    have_forward_ = false;
}

template <typename T>
const Tensor3<T>& Model<T>::input_gradient() const {
    if (node_grad_.empty() || node_grad_.front().batch == 0)
        throw StateError("input_gradient: no backward pass has run");
    return node_grad_.front();
}

template <typename T>
std::vector<typename Model<T>::ParamView> Model<T>::trainable_params() {
    std::vector<ParamView> views;
    for (auto& c : convs_) {
        views.push_back({c.name + ".kernel", c.p.kernel.data.data(),
                         c.grad_kernel.data.data(), c.p.kernel.size()});
        views.push_back({c.name + ".bias", c.p.bias.data(), c.grad_bias.data(),
                         c.p.bias.size()});
    }
    for (auto& b : bns_) {
        views.push_back({b.name + ".gamma", b.p.gamma.data(), b.grad_gamma.data(),
                         b.p.gamma.size()});
        views.push_back({b.name + ".beta", b.p.beta.data(), b.grad_beta.data(),
                         b.p.beta.size()});
    }
    return views;
}

template <typename T>
void Model<T>::zero_grad() {
    for (auto& c : convs_) {
        c.grad_kernel.zero();
        std::fill(c.grad_bias.begin(), c.grad_bias.end(), T(0));
    }
    for (auto& b : bns_) {
        std::fill(b.grad_gamma.begin(), b.grad_gamma.end(), T(0));
        std::fill(b.grad_beta.begin(), b.grad_beta.end(), T(0));
    }
}

template <typename T>
ActivationProfile Model<T>::predict_profile(const Tensor3<T>& x_window) {
    if (x_window.batch != 1)
        throw ShapeError("predict_profile expects a single window (batch 1)");
    const Tensor3<T> posterior = forward(x_window, Phase::infer);
    ActivationProfile p;
    p.states.resize(posterior.length);
    const T* v = posterior.row(0, 0);
    for (int i = 0; i < posterior.length; ++i)
        p.states[i] = v[i] >= T(0.5) ? 1 : 0;  // tie goes to "on"
    return p;
}

template <typename T>
std::vector<std::vector<T>> Model<T>::save_state() const {
    std::vector<std::vector<T>> s;
    for (const auto& c : convs_) {
        s.push_back(c.p.kernel.data);
        s.push_back(c.p.bias);
    }
    for (const auto& b : bns_) {
        s.push_back(b.p.gamma);
        s.push_back(b.p.beta);
        s.push_back(b.p.running_mean);
        s.push_back(b.p.running_var);
    }
    return s;
}

template <typename T>
void Model<T>::load_state(const std::vector<std::vector<T>>& state) {
    size_t i = 0;
    const auto take = [&](std::vector<T>& dst) {
        if (i >= state.size() || state[i].size() != dst.size())
            throw ShapeError("load_state: snapshot does not match this model");
        dst = state[i++];
    };
    for (auto& c : convs_) {
        take(c.p.kernel.data);
        take(c.p.bias);
    }
    for (auto& b : bns_) {
        take(b.p.gamma);
        take(b.p.beta);
        take(b.p.running_mean);
        take(b.p.running_var);
    }
    if (i != state.size())
        throw ShapeError("load_state: snapshot does not match this model");
}

// ---------------------------------------------------------------------------
// checkpoint file format: magic, little-endian body, trailing CRC32.
// body = version, dtype, config text, metadata, named tensor records.
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'D', 'S', 'G', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kVersion = 1;

uint32_t crc32_update(uint32_t crc, const void* data, size_t len) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int j = 0; j < 8; ++j)
                c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    const auto* p = static_cast<const unsigned char*>(data);
    crc = ~crc;
    for (size_t i = 0; i < len; ++i) crc = table[(crc ^ p[i]) & 0xFF] ^ (crc >> 8);
    return ~crc;
}

struct ByteWriter {
    std::string buf;
    void bytes(const void* p, size_t n) {
        buf.append(static_cast<const char*>(p), n);
    }
    void u8(uint8_t v) { bytes(&v, 1); }
    void u32(uint32_t v) { bytes(&v, 4); }
    void u64(uint64_t v) { bytes(&v, 8); }
    void i64(int64_t v) { bytes(&v, 8); }
    void f64(double v) { bytes(&v, 8); }
    void str(const std::string& s) {
        u64(s.size());
        bytes(s.data(), s.size());
    }
};

struct ByteReader {
    const std::string& buf;
    size_t pos = 0;
    explicit ByteReader(const std::string& b) : buf(b) {}
    void bytes(void* p, size_t n) {
        if (pos + n > buf.size())
            throw DataError("checkpoint truncated or corrupt");
        std::memcpy(p, buf.data() + pos, n);
        pos += n;
    }
    uint8_t u8() { uint8_t v; bytes(&v, 1); return v; }
    uint32_t u32() { uint32_t v; bytes(&v, 4); return v; }
    uint64_t u64() { uint64_t v; bytes(&v, 8); return v; }
    int64_t i64() { int64_t v; bytes(&v, 8); return v; }
    double f64() { double v; bytes(&v, 8); return v; }
    std::string str() {
        const uint64_t n = u64();
        if (pos + n > buf.size())
            throw DataError("checkpoint truncated or corrupt");
        std::string s(buf.data() + pos, n);
        pos += n;
        return s;
    }
};

template <typename T>
void write_tensor(ByteWriter& w, const std::string& name,
                  const std::vector<uint64_t>& dims, const std::vector<T>& data) {
    w.str(name);
    w.u32(static_cast<uint32_t>(dims.size()));
    size_t count = 1;
    for (uint64_t d : dims) {
        w.u64(d);
        count *= static_cast<size_t>(d);
    }
    if (count != data.size())
        throw StateError("write_tensor: dim/data mismatch for " + name);
    w.bytes(data.data(), data.size() * sizeof(T));
}

}  // namespace

template <typename T>
void Model<T>::save_checkpoint(const std::string& path,
                               const std::map<std::string, std::vector<T>>& extra) const {
    ByteWriter w;
    w.u32(kVersion);
    w.u8(static_cast<uint8_t>(sizeof(T)));
    w.str(config_to_kv(cfg_));
    w.i64(meta.epoch);
    w.u64(meta.seed);
    w.u64(meta.loss_history.size());
    for (double v : meta.loss_history) w.f64(v);
    w.u8(has_standardizer ? 1 : 0);
    w.f64(input_mean);
    w.f64(input_std);

    uint64_t tensor_count = convs_.size() * 2 + bns_.size() * 4 + extra.size();
    w.u64(tensor_count);
    for (const auto& c : convs_) {
        write_tensor(w, c.name + ".kernel",
                     {static_cast<uint64_t>(c.p.kernel.batch),
                      static_cast<uint64_t>(c.p.kernel.channels),
                      static_cast<uint64_t>(c.p.kernel.length)},
                     c.p.kernel.data);
        write_tensor(w, c.name + ".bias", {c.p.bias.size()}, c.p.bias);
    }
    for (const auto& b : bns_) {
        write_tensor(w, b.name + ".gamma", {b.p.gamma.size()}, b.p.gamma);
        write_tensor(w, b.name + ".beta", {b.p.beta.size()}, b.p.beta);
        write_tensor(w, b.name + ".running_mean", {b.p.running_mean.size()},
                     b.p.running_mean);
        write_tensor(w, b.name + ".running_var", {b.p.running_var.size()},
                     b.p.running_var);
    }
    for (const auto& [name, data] : extra)
        write_tensor(w, name, {data.size()}, data);

    const uint32_t crc = crc32_update(0, w.buf.data(), w.buf.size());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    out.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
    out.write(reinterpret_cast<const char*>(&crc), 4);
    if (!out) throw DataError("checkpoint write failed: " + path);
}

template <typename T>
Model<T> Model<T>::load_checkpoint(const std::string& path,
                                   std::map<std::string, std::vector<T>>* extra,
                                   const ModelConfig* expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string file = ss.str();
    if (file.size() < sizeof(kMagic) + 4 ||
        std::memcmp(file.data(), kMagic, sizeof(kMagic)) != 0)
        throw DataError(path + ": not a checkpoint file (bad magic)");

    const std::string body = file.substr(sizeof(kMagic), file.size() - sizeof(kMagic) - 4);
    uint32_t stored_crc;
    std::memcpy(&stored_crc, file.data() + file.size() - 4, 4);
    if (crc32_update(0, body.data(), body.size()) != stored_crc)
        throw DataError(path + ": checkpoint CRC mismatch (truncated or corrupt)");

    ByteReader r(body);
    const uint32_t version = r.u32();
    if (version != kVersion)
        throw DataError(path + ": unsupported checkpoint version " +
                        std::to_string(version));
    const uint8_t dtype = r.u8();
    if (dtype != sizeof(T))
        throw DataError(path + ": checkpoint scalar width " +
                        std::to_string(dtype) + " does not match this build (" +
                        std::to_string(sizeof(T)) + ")");

    const std::string cfg_text = r.str();
    if (expected && config_to_kv(*expected) != cfg_text)
        throw DataError(path + ": checkpoint config does not match the requested model");

    Model m;
    m.cfg_ = config_from_kv(cfg_text);
    m.graph_ = detail::compile_graph(m.cfg_);
    m.allocate_params(0);
    m.rng_ = Rng(0);

    m.meta.epoch = r.i64();
    m.meta.seed = r.u64();
    const uint64_t hist = r.u64();
    m.meta.loss_history.resize(hist);
    for (uint64_t i = 0; i < hist; ++i) m.meta.loss_history[i] = r.f64();
    m.has_standardizer = r.u8() != 0;
    m.input_mean = r.f64();
    m.input_std = r.f64();

    struct Slot {
        std::vector<T>* data;
        std::vector<uint64_t> dims;
        bool filled = false;
    };
    std::map<std::string, Slot> slots;
    for (auto& c : m.convs_) {
        slots[c.name + ".kernel"] = {&c.p.kernel.data,
                                     {static_cast<uint64_t>(c.p.kernel.batch),
                                      static_cast<uint64_t>(c.p.kernel.channels),
                                      static_cast<uint64_t>(c.p.kernel.length)}};
        slots[c.name + ".bias"] = {&c.p.bias, {c.p.bias.size()}};
    }
    for (auto& b : m.bns_) {
        slots[b.name + ".gamma"] = {&b.p.gamma, {b.p.gamma.size()}};
        slots[b.name + ".beta"] = {&b.p.beta, {b.p.beta.size()}};
        slots[b.name + ".running_mean"] = {&b.p.running_mean,
                                           {b.p.running_mean.size()}};
        slots[b.name + ".running_var"] = {&b.p.running_var,
                                          {b.p.running_var.size()}};
    }

    const uint64_t tensor_count = r.u64();
    for (uint64_t t = 0; t < tensor_count; ++t) {
        const std::string name = r.str();
        const uint32_t rank = r.u32();
        std::vector<uint64_t> dims(rank);
        size_t count = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            dims[d] = r.u64();
            count *= static_cast<size_t>(dims[d]);
        }
        std::vector<T> data(count);
        r.bytes(data.data(), count * sizeof(T));
        const auto it = slots.find(name);
        if (it == slots.end()) {
            if (extra)
                (*extra)[name] = std::move(data);
            else if (name.rfind("opt.", 0) != 0)
                throw DataError(path + ": unexpected tensor '" + name + "'");
            continue;
        }
        if (it->second.dims != dims)
            throw DataError(path + ": tensor '" + name +
                            "' shape does not match the embedded config");
        *it->second.data = std::move(data);
        it->second.filled = true;
    }
    for (const auto& [name, slot] : slots)
        if (!slot.filled)
            throw DataError(path + ": tensor '" + name + "' missing from checkpoint");
    return m;
}

template class Model<float>;
template class Model<double>;

}  // namespace disagg
