#include "rave/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rave {

// ---------------------------------------------------------------------------
// ModelConfig
// ---------------------------------------------------------------------------

int ModelConfig::stride_product() const {
    int p = 1;
    for (int s : encoder_strides) p *= s;
    return p;
}

int ModelConfig::total_factor() const { return bands * stride_product(); }

std::vector<int> ModelConfig::decoder_ratios() const {
    std::vector<int> r(encoder_strides.rbegin(), encoder_strides.rend());
    return r;
}

static bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

void ModelConfig::validate() const {
    if (sample_rate <= 0) throw ConfigError("sample_rate must be positive");
    if (bands < 1) throw ConfigError("bands must be >= 1");
    if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
    if (encoder_hidden.empty() || encoder_hidden.size() != encoder_strides.size())
        throw ConfigError("encoder_hidden and encoder_strides must be non-empty and equal-length");
    for (int s : encoder_strides)
        if (s < 1) throw ConfigError("encoder strides must be >= 1");
    if (decoder_channels.size() != encoder_strides.size() + 1)
        throw ConfigError("decoder_channels must list one input width plus one width per stage");
    if (noise_bands < 1) throw ConfigError("noise_bands must be >= 1");
    if (!is_pow2(noise_frame)) throw ConfigError("noise_frame must be a power of two");
    if (stride_product() % noise_frame != 0)
        throw ConfigError("noise_frame must divide the per-frame multiband sample count (product of strides)");
    if (disc_scales < 1) throw ConfigError("disc_scales must be >= 1");
    if (disc_channels.size() < 2) throw ConfigError("disc_channels needs an input width and at least one layer");
    if (disc_groups.size() != disc_channels.size() - 1)
        throw ConfigError("disc_groups must have one entry per strided layer");
    for (std::size_t i = 0; i + 1 < disc_channels.size(); ++i) {
        const int g = disc_groups[i];
        if (g < 1 || disc_channels[i] % g != 0 || disc_channels[i + 1] % g != 0)
            throw ConfigError("disc_groups must divide adjacent channel widths");
    }
    for (int n : spectral_scales)
        if (!is_pow2(n) || n < 8) throw ConfigError("spectral scales must be powers of two >= 8");
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::full() {
    ModelConfig c;
    c.sample_rate = 48000;
    c.bands = 16;
    c.latent_dim = 128;
    c.encoder_hidden = {64, 128, 256, 512};
    c.encoder_strides = {4, 4, 4, 2};
    c.decoder_channels = {1024, 512, 256, 128, 64};
    c.noise_frame = 64;
    c.disc_in_kernel = 15;
    c.disc_kernel = 41;
    c.disc_stride = 4;
    c.disc_channels = {16, 64, 256, 512, 512};
    c.disc_groups = {4, 16, 64, 256};
    c.disc_post_kernel = 5;
    c.spectral_scales = {2048, 1024, 512, 256, 128};
    return c;
}

// ---------------------------------------------------------------------------
// graph nodes
// ---------------------------------------------------------------------------

template <typename T>
ag::Var<T> pqmf_synth(ag::Tape<T>* tape, const ag::Var<T>& mb, const pqmf::Bank& bank) {
    const int M = bank.bands();
    if (mb->c != M) throw ShapeError("pqmf_synth: band count mismatch");
    const std::size_t S = static_cast<std::size_t>(mb->t);
    ag::Var<T> out = ag::make_var<T>(mb->b, 1, mb->t * M, tape != nullptr && mb->requires_grad);

    std::vector<double> buf(static_cast<std::size_t>(M) * S);
    for (int b = 0; b < mb->b; ++b) {
        const T* src = mb->v.data() + static_cast<std::size_t>(b) * M * S;
        for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<double>(src[i]);
        const std::vector<double> y = bank.synthesize(buf.data(), S);
        T* dst = out->v.data() + static_cast<std::size_t>(b) * y.size();
        for (std::size_t i = 0; i < y.size(); ++i) dst[i] = static_cast<T>(y[i]);
    }

    if (out->requires_grad) {
        const pqmf::Bank* bk = &bank;
        tape->record([mb, out, bk] {
            mb->ensure_grad();
            const int M = bk->bands(), L = bk->taps();
            const std::size_t S = static_cast<std::size_t>(mb->t);
            const std::size_t Tn = static_cast<std::size_t>(out->t);
            for (int b = 0; b < mb->b; ++b) {
                const T* gy = out->g.data() + static_cast<std::size_t>(b) * Tn;
                for (int k = 0; k < M; ++k) {
                    const double* g = bk->synthesis_filter(k);
                    T* gmb = mb->g.data() + (static_cast<std::size_t>(b) * M + k) * S;
                    for (std::size_t s = 0; s < S; ++s) {
                        const std::size_t n0 = s * M;
                        const std::size_t tmax = std::min<std::size_t>(L, Tn - n0);
                        double acc = 0.0;
                        const T* gyp = gy + n0;
                        for (std::size_t t = 0; t < tmax; ++t) acc += g[t] * static_cast<double>(gyp[t]);
                        gmb[s] += static_cast<T>(acc);
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
ag::Var<T> pqmf_analyze(const ag::Var<T>& audio, const pqmf::Bank& bank) {
    if (audio->c != 1) throw ShapeError("pqmf_analyze expects [B,1,T]");
    const int M = bank.bands();
    if (audio->t % M != 0) throw ShapeError("pqmf_analyze: length must be a multiple of bands");
    const std::size_t S = static_cast<std::size_t>(audio->t) / M;
    ag::Var<T> mb = ag::make_var<T>(audio->b, M, static_cast<int>(S));
    std::vector<double> buf(static_cast<std::size_t>(audio->t));
    for (int b = 0; b < audio->b; ++b) {
        const T* src = audio->v.data() + static_cast<std::size_t>(b) * audio->t;
        for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<double>(src[i]);
        const std::vector<double> y = bank.analyze(buf.data(), buf.size());
        T* dst = mb->v.data() + static_cast<std::size_t>(b) * y.size();
        for (std::size_t i = 0; i < y.size(); ++i) dst[i] = static_cast<T>(y[i]);
    }
    return mb;
}

std::vector<double> noise_fir_table(int noise_bands) {
    const int nb = noise_bands;
    const int taps = 2 * nb + 1;
    const int bins = nb + 1;
    std::vector<double> table(static_cast<std::size_t>(taps) * bins);
    for (int t = 0; t < taps; ++t) {
        const int m = t - nb;  // centered time index
        // Symmetric Hann taper over the FIR support.
        const double win = 0.5 - 0.5 * std::cos(2.0 * M_PI * t / (taps - 1));
        for (int j = 0; j < bins; ++j) {
            const double w = M_PI * j / nb;
            double v = std::cos(w * m) / nb;
            if (j == 0 || j == nb) v *= 0.5;
            table[static_cast<std::size_t>(t) * bins + j] = v * win;
        }
    }
    return table;
}

std::uint64_t noise_stream_index(int batch, int band, std::int64_t frame) {
    return (static_cast<std::uint64_t>(batch) << 52) ^ (static_cast<std::uint64_t>(band) << 44) ^
           static_cast<std::uint64_t>(frame);
}

template <typename T>
ag::Var<T> noise_fir_synth(ag::Tape<T>* tape, const ag::Var<T>& amps, int bands, int noise_bands,
                           int noise_frame, std::uint64_t seed, std::int64_t frame_offset) {
    const int bins = noise_bands + 1;
    const int taps = 2 * noise_bands + 1;
    if (amps->c != bands * bins) throw ShapeError("noise_fir_synth: amplitude channel mismatch");
    const int F = amps->t;
    const int NF = noise_frame;
    const int Tout = F * NF;
    ag::Var<T> out = ag::make_var<T>(amps->b, bands, Tout, tape != nullptr && amps->requires_grad);
    const auto table = std::make_shared<std::vector<double>>(noise_fir_table(noise_bands));

    std::vector<double> h(static_cast<std::size_t>(taps));
    std::vector<double> n(static_cast<std::size_t>(NF));
    for (int b = 0; b < amps->b; ++b) {
        for (int k = 0; k < bands; ++k) {
            T* orow = out->v.data() + (static_cast<std::size_t>(b) * bands + k) * Tout;
            for (int f = 0; f < F; ++f) {
                for (int t = 0; t < taps; ++t) {
                    double acc = 0.0;
                    for (int j = 0; j < bins; ++j)
                        acc += (*table)[static_cast<std::size_t>(t) * bins + j] *
                               static_cast<double>(amps->at(b, k * bins + j, f));
                    h[t] = acc;
                }
                Rng rng = Rng::substream(seed, noise_stream_index(b, k, frame_offset + f));
                for (int u = 0; u < NF; ++u) n[u] = rng.uniform(-1.0, 1.0);
                const int base = f * NF;
                for (int u = 0; u < NF; ++u) {
                    const double nv = n[u];
                    const int tmax = std::min(taps, Tout - base - u);
                    for (int t = 0; t < tmax; ++t)
                        orow[base + u + t] += static_cast<T>(h[t] * nv);
                }
            }
        }
    }

    if (out->requires_grad) {
        tape->record([amps, out, bands, noise_bands, noise_frame, seed, frame_offset, table] {
            amps->ensure_grad();
            const int bins = noise_bands + 1;
            const int taps = 2 * noise_bands + 1;
            const int F = amps->t, NF = noise_frame, Tout = out->t;
            std::vector<double> gh(static_cast<std::size_t>(taps));
            std::vector<double> n(static_cast<std::size_t>(NF));
            for (int b = 0; b < amps->b; ++b) {
                for (int k = 0; k < bands; ++k) {
                    const T* grow = out->g.data() + (static_cast<std::size_t>(b) * bands + k) * Tout;
                    for (int f = 0; f < F; ++f) {
                        Rng rng = Rng::substream(seed, noise_stream_index(b, k, frame_offset + f));
                        for (int u = 0; u < NF; ++u) n[u] = rng.uniform(-1.0, 1.0);
                        std::fill(gh.begin(), gh.end(), 0.0);
                        const int base = f * NF;
                        for (int u = 0; u < NF; ++u) {
                            const double nv = n[u];
                            const int tmax = std::min(taps, Tout - base - u);
                            for (int t = 0; t < tmax; ++t)
                                gh[t] += static_cast<double>(grow[base + u + t]) * nv;
                        }
                        for (int j = 0; j < bins; ++j) {
                            double acc = 0.0;
                            for (int t = 0; t < taps; ++t)
                                acc += (*table)[static_cast<std::size_t>(t) * bins + j] * gh[t];
                            amps->g[(static_cast<std::size_t>(b) * amps->c + k * bins + j) *
                                        static_cast<std::size_t>(F) +
                                    f] += static_cast<T>(acc);
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// construction
// ---------------------------------------------------------------------------

namespace {

template <typename T>
Conv<T> make_conv(int cin, int cout, int k, int stride, int dilation, int groups, Rng& rng,
                  bool causal = true) {
    Conv<T> c;
    c.w = ag::make_var<T>(cout, cin / groups, k, true);
    c.b = ag::make_var<T>(1, cout, 1, true);
    c.stride = stride;
    c.dilation = dilation;
    c.groups = groups;
    c.pad_left = causal ? dilation * (k - 1) - (stride - 1) : 0;
    if (c.pad_left < 0) c.pad_left = 0;
    ag::kaiming_uniform(c.w, (cin / groups) * k, rng);
    return c;
}

template <typename T>
TConv<T> make_tconv(int cin, int cout, int ratio, Rng& rng) {
    TConv<T> t;
    const int k = 2 * ratio;
    t.w = ag::make_var<T>(cin, cout, k, true);
    t.b = ag::make_var<T>(1, cout, 1, true);
    t.ratio = ratio;
    ag::kaiming_uniform(t.w, cin * k, rng);
    return t;
}

template <typename T>
BatchNorm<T> make_bn(int c) {
    BatchNorm<T> bn;
    bn.gamma = ag::make_var<T>(1, c, 1, true);
    bn.beta = ag::make_var<T>(1, c, 1, true);
    bn.rmean = ag::make_var<T>(1, c, 1, false);
    bn.rvar = ag::make_var<T>(1, c, 1, false);
    ag::fill_constant(bn.gamma, T(1));
    ag::fill_constant(bn.rvar, T(1));
    return bn;
}

// noise_frame split into conv strides (largest first).
std::vector<int> noise_stride_chain(int noise_frame) {
    std::vector<int> f;
    int v = noise_frame;
    while (v % 4 == 0) { f.push_back(4); v /= 4; }
    while (v % 2 == 0) { f.push_back(2); v /= 2; }
    return f;
}

}  // namespace

template <typename T>
Model<T>::Model(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), bank_(cfg.bands, cfg.pqmf_taps) {
    cfg_.validate();
    Rng rng(seed);
    build(rng);
}

template <typename T>
void Model<T>::build(Rng& rng) {
    const auto& cfg = cfg_;
    // encoder
    int cin = cfg.bands;
    for (std::size_t i = 0; i < cfg.encoder_hidden.size(); ++i) {
        const int s = cfg.encoder_strides[i];
        enc_blocks_.push_back(make_conv<T>(cin, cfg.encoder_hidden[i], 2 * s + 1, s, 1, 1, rng));
        enc_norms_.push_back(make_bn<T>(cfg.encoder_hidden[i]));
        cin = cfg.encoder_hidden[i];
    }
    head_mu_ = make_conv<T>(cin, cfg.latent_dim, 1, 1, 1, 1, rng);
    head_lv_ = make_conv<T>(cin, cfg.latent_dim, 1, 1, 1, 1, rng);

    // decoder trunk
    dec_in_ = make_conv<T>(cfg.latent_dim, cfg.decoder_channels[0], 3, 1, 1, 1, rng);
    const std::vector<int> ratios = cfg.decoder_ratios();
    for (std::size_t i = 0; i < ratios.size(); ++i) {
        DecoderStage<T> st;
        st.up = make_tconv<T>(cfg.decoder_channels[i], cfg.decoder_channels[i + 1], ratios[i], rng);
        const int w = cfg.decoder_channels[i + 1];
        for (int d : {1, 3, 9}) {
            ResidualUnit<T> u;
            u.c1 = make_conv<T>(w, w, 3, 1, d, 1, rng);
            u.c2 = make_conv<T>(w, w, 3, 1, 1, 1, rng);
            st.units.push_back(std::move(u));
        }
        dec_stages_.push_back(std::move(st));
    }

    // heads
    const int wlast = cfg.decoder_channels.back();
    wave_head_ = make_conv<T>(wlast, cfg.bands, 3, 1, 1, 1, rng);
    loud_head_ = make_conv<T>(wlast, 1, 3, 1, 1, 1, rng);
    for (int f : noise_stride_chain(cfg.noise_frame))
        noise_convs_.push_back(make_conv<T>(wlast, wlast, 2 * f + 1, f, 1, 1, rng));
    noise_out_ = make_conv<T>(wlast, cfg.bands * (cfg.noise_bands + 1), 1, 1, 1, 1, rng);
    // Start the noise head almost silent.
    ag::fill_constant(noise_out_.b, T(-4));

    // discriminator (independent weights per scale)
    for (int s = 0; s < cfg.disc_scales; ++s) {
        DiscriminatorScale<T> sc;
        sc.in = make_conv<T>(1, cfg.disc_channels[0], cfg.disc_in_kernel, 1, 1, 1, rng);
        for (std::size_t i = 0; i + 1 < cfg.disc_channels.size(); ++i)
            sc.strided.push_back(make_conv<T>(cfg.disc_channels[i], cfg.disc_channels[i + 1],
                                              cfg.disc_kernel, cfg.disc_stride, 1,
                                              cfg.disc_groups[i], rng));
        const int wl = cfg.disc_channels.back();
        if (cfg.disc_post_kernel > 0) {
            sc.post = make_conv<T>(wl, wl, cfg.disc_post_kernel, 1, 1, 1, rng);
            sc.has_post = true;
        }
        sc.out = make_conv<T>(wl, 1, cfg.disc_out_kernel, 1, 1, 1, rng);
        disc_.push_back(std::move(sc));
    }
}

// ---------------------------------------------------------------------------
// forward passes
// ---------------------------------------------------------------------------

template <typename T>
Posterior<T> Model<T>::encode(ag::Tape<T>* tape, const ag::Var<T>& x, bool train) {
    if (x->c != 1) throw ShapeError("encode expects [B,1,T]");
    if (x->t % cfg_.total_factor() != 0)
        throw ShapeError("encode: input length " + std::to_string(x->t) +
                         " not divisible by the total factor " + std::to_string(cfg_.total_factor()));
    ag::Var<T> h = pqmf_analyze(x, bank_);
    const T slope = static_cast<T>(cfg_.leaky_slope);
    for (std::size_t i = 0; i < enc_blocks_.size(); ++i) {
        h = enc_blocks_[i](tape, h);
        h = enc_norms_[i](tape, h, train);
        h = ag::leaky_relu(tape, h, slope);
    }
    Posterior<T> p;
    p.mu = head_mu_(tape, h);
    p.logvar = ag::clamp_(tape, head_lv_(tape, h), static_cast<T>(cfg_.logvar_min),
                          static_cast<T>(cfg_.logvar_max));
    return p;
}

template <typename T>
ag::Var<T> Model<T>::decoder_trunk(ag::Tape<T>* tape, const ag::Var<T>& z) {
    const T slope = static_cast<T>(cfg_.leaky_slope);
    ag::Var<T> h = dec_in_(tape, z);
    for (const auto& st : dec_stages_) {
        h = st.up(tape, ag::leaky_relu(tape, h, slope));
        for (const auto& u : st.units) {
            ag::Var<T> y = u.c1(tape, ag::leaky_relu(tape, h, slope));
            y = u.c2(tape, ag::leaky_relu(tape, y, slope));
            h = ag::add(tape, h, y);
        }
    }
    return h;
}

template <typename T>
ag::Var<T> Model<T>::decode_multiband(ag::Tape<T>* tape, const ag::Var<T>& z, bool train,
                                      std::uint64_t noise_seed, std::int64_t mb_frame_offset) {
    (void)train;  // the decoder has no normalization layers
    if (z->c != cfg_.latent_dim) throw ShapeError("decode: latent channel mismatch");
    if (mb_frame_offset % cfg_.noise_frame != 0)
        throw ShapeError("decode: stream offset must be a multiple of noise_frame");
    const T slope = static_cast<T>(cfg_.leaky_slope);
    ag::Var<T> h = decoder_trunk(tape, z);

    ag::Var<T> wave = ag::tanh_(tape, wave_head_(tape, h));
    ag::Var<T> loud = ag::sigmoid_(tape, loud_head_(tape, h));
    ag::Var<T> shaped = ag::mul_channel(tape, wave, loud);

    ag::Var<T> nh = h;
    for (const auto& c : noise_convs_) nh = ag::leaky_relu(tape, c(tape, nh), slope);
    ag::Var<T> amps = ag::sigmoid_(tape, noise_out_(tape, nh));
    ag::Var<T> noise = noise_fir_synth(tape, amps, cfg_.bands, cfg_.noise_bands, cfg_.noise_frame,
                                       noise_seed, mb_frame_offset / cfg_.noise_frame);
    return ag::add(tape, shaped, noise);
}

template <typename T>
ag::Var<T> Model<T>::decode(ag::Tape<T>* tape, const ag::Var<T>& z, bool train,
                            std::uint64_t noise_seed, std::int64_t mb_frame_offset) {
    return pqmf_synth(tape, decode_multiband(tape, z, train, noise_seed, mb_frame_offset), bank_);
}

template <typename T>
DiscriminatorOutput<T> Model<T>::discriminate(ag::Tape<T>* tape, const ag::Var<T>& audio) {
    if (audio->c != 1) throw ShapeError("discriminate expects [B,1,T]");
    const T slope = static_cast<T>(cfg_.leaky_slope);
    DiscriminatorOutput<T> out;
    ag::Var<T> x = audio;
    for (int s = 0; s < cfg_.disc_scales; ++s) {
        if (s > 0) x = ag::avg_pool2(tape, x);
        const auto& sc = disc_[s];
        std::vector<ag::Var<T>> feats;
        ag::Var<T> h = ag::leaky_relu(tape, sc.in(tape, x), slope);
        feats.push_back(h);
        for (const auto& c : sc.strided) {
            h = ag::leaky_relu(tape, c(tape, h), slope);
            feats.push_back(h);
        }
        if (sc.has_post) {
            h = ag::leaky_relu(tape, sc.post(tape, h), slope);
            feats.push_back(h);
        }
        out.logits.push_back(sc.out(tape, h));
        out.features.push_back(std::move(feats));
    }
    return out;
}

// ---------------------------------------------------------------------------
// parameter registry
// ---------------------------------------------------------------------------

namespace {

template <typename T>
void push_conv(std::vector<ag::Var<T>>& v, const Conv<T>& c) {
    v.push_back(c.w);
    v.push_back(c.b);
}

}  // namespace

template <typename T>
std::vector<ag::Var<T>> Model<T>::encoder_params() const {
    std::vector<ag::Var<T>> v;
    for (std::size_t i = 0; i < enc_blocks_.size(); ++i) {
        push_conv(v, enc_blocks_[i]);
        v.push_back(enc_norms_[i].gamma);
        v.push_back(enc_norms_[i].beta);
    }
    push_conv(v, head_mu_);
    push_conv(v, head_lv_);
    return v;
}

template <typename T>
std::vector<ag::Var<T>> Model<T>::decoder_params() const {
    std::vector<ag::Var<T>> v;
    push_conv(v, dec_in_);
    for (const auto& st : dec_stages_) {
        v.push_back(st.up.w);
        v.push_back(st.up.b);
        for (const auto& u : st.units) {
            push_conv(v, u.c1);
            push_conv(v, u.c2);
        }
    }
    push_conv(v, wave_head_);
    push_conv(v, loud_head_);
    for (const auto& c : noise_convs_) push_conv(v, c);
    push_conv(v, noise_out_);
    return v;
}

template <typename T>
std::vector<ag::Var<T>> Model<T>::discriminator_params() const {
    std::vector<ag::Var<T>> v;
    for (const auto& sc : disc_) {
        push_conv(v, sc.in);
        for (const auto& c : sc.strided) push_conv(v, c);
        if (sc.has_post) push_conv(v, sc.post);
        push_conv(v, sc.out);
    }
    return v;
}

template <typename T>
std::vector<std::pair<std::string, ag::Var<T>>> Model<T>::named_tensors() const {
    std::vector<std::pair<std::string, ag::Var<T>>> v;
    auto conv = [&](const std::string& p, const Conv<T>& c) {
        v.emplace_back(p + ".w", c.w);
        v.emplace_back(p + ".b", c.b);
    };
    for (std::size_t i = 0; i < enc_blocks_.size(); ++i) {
        const std::string p = "enc.b" + std::to_string(i);
        conv(p, enc_blocks_[i]);
        v.emplace_back(p + ".bn.gamma", enc_norms_[i].gamma);
        v.emplace_back(p + ".bn.beta", enc_norms_[i].beta);
        v.emplace_back(p + ".bn.rmean", enc_norms_[i].rmean);
        v.emplace_back(p + ".bn.rvar", enc_norms_[i].rvar);
    }
    conv("enc.mu", head_mu_);
    conv("enc.lv", head_lv_);
    conv("dec.in", dec_in_);
    for (std::size_t i = 0; i < dec_stages_.size(); ++i) {
        const std::string p = "dec.s" + std::to_string(i);
        v.emplace_back(p + ".up.w", dec_stages_[i].up.w);
        v.emplace_back(p + ".up.b", dec_stages_[i].up.b);
        for (std::size_t j = 0; j < dec_stages_[i].units.size(); ++j) {
            conv(p + ".r" + std::to_string(j) + ".c1", dec_stages_[i].units[j].c1);
            conv(p + ".r" + std::to_string(j) + ".c2", dec_stages_[i].units[j].c2);
        }
    }
    conv("dec.wave", wave_head_);
    conv("dec.loud", loud_head_);
    for (std::size_t i = 0; i < noise_convs_.size(); ++i)
        conv("dec.noise.c" + std::to_string(i), noise_convs_[i]);
    conv("dec.noise.out", noise_out_);
    for (std::size_t s = 0; s < disc_.size(); ++s) {
        const std::string p = "dis.s" + std::to_string(s);
        conv(p + ".in", disc_[s].in);
        for (std::size_t i = 0; i < disc_[s].strided.size(); ++i)
            conv(p + ".c" + std::to_string(i), disc_[s].strided[i]);
        if (disc_[s].has_post) conv(p + ".post", disc_[s].post);
        conv(p + ".out", disc_[s].out);
    }
    return v;
}

namespace {

template <typename T>
std::size_t count_params(const std::vector<ag::Var<T>>& v) {
    std::size_t n = 0;
    for (const auto& p : v) n += p->size();
    return n;
}

}  // namespace

template <typename T>
std::size_t Model<T>::param_count_encoder() const { return count_params(encoder_params()); }
template <typename T>
std::size_t Model<T>::param_count_decoder() const { return count_params(decoder_params()); }
template <typename T>
std::size_t Model<T>::param_count_discriminator() const { return count_params(discriminator_params()); }
template <typename T>
std::size_t Model<T>::param_count() const {
    return param_count_encoder() + param_count_decoder() + param_count_discriminator();
}

// ---------------------------------------------------------------------------
// losses over discriminator outputs
// ---------------------------------------------------------------------------

template <typename T>
ag::Var<T> feature_matching(ag::Tape<T>* tape, const DiscriminatorOutput<T>& real,
                            const DiscriminatorOutput<T>& fake) {
    if (real.features.size() != fake.features.size())
        throw ShapeError("feature_matching: scale count mismatch");
    ag::Var<T> acc = ag::make_scalar<T>(0);
    int count = 0;
    for (std::size_t s = 0; s < real.features.size(); ++s) {
        if (real.features[s].size() != fake.features[s].size())
            throw ShapeError("feature_matching: layer count mismatch");
        for (std::size_t l = 0; l < real.features[s].size(); ++l) {
            ag::Var<T> d = ag::sub(tape, real.features[s][l], fake.features[s][l]);
            ag::Var<T> m = ag::scale(tape, ag::abs_sum(tape, d), T(1) / static_cast<T>(d->size()));
            acc = ag::add(tape, acc, m);
            ++count;
        }
    }
    return ag::scale(tape, acc, T(1) / static_cast<T>(count));
}

template <typename T>
ag::Var<T> hinge_discriminator(ag::Tape<T>* tape, const std::vector<ag::Var<T>>& real_logits,
                               const std::vector<ag::Var<T>>& fake_logits) {
    if (real_logits.size() != fake_logits.size())
        throw ShapeError("hinge_discriminator: scale count mismatch");
    ag::Var<T> acc = ag::make_scalar<T>(0);
    for (std::size_t s = 0; s < real_logits.size(); ++s) {
        // max(0, 1 - D(x))
        ag::Var<T> r = ag::leaky_relu(tape, ag::add_scalar(tape, ag::scale(tape, real_logits[s], T(-1)), T(1)), T(0));
        // max(0, 1 + D(xhat))
        ag::Var<T> f = ag::leaky_relu(tape, ag::add_scalar(tape, fake_logits[s], T(1)), T(0));
        acc = ag::add(tape, acc, ag::add(tape, ag::reduce_mean(tape, r), ag::reduce_mean(tape, f)));
    }
    return ag::scale(tape, acc, T(1) / static_cast<T>(real_logits.size()));
}

template <typename T>
ag::Var<T> hinge_generator(ag::Tape<T>* tape, const std::vector<ag::Var<T>>& fake_logits) {
    ag::Var<T> acc = ag::make_scalar<T>(0);
    for (const auto& l : fake_logits) acc = ag::add(tape, acc, ag::reduce_mean(tape, l));
    return ag::scale(tape, acc, T(-1) / static_cast<T>(fake_logits.size()));
}

// ---------------------------------------------------------------------------
// explicit instantiations
// ---------------------------------------------------------------------------

template class Model<float>;
template class Model<double>;

template ag::Var<float> pqmf_synth<float>(ag::Tape<float>*, const ag::Var<float>&, const pqmf::Bank&);
template ag::Var<double> pqmf_synth<double>(ag::Tape<double>*, const ag::Var<double>&, const pqmf::Bank&);
template ag::Var<float> pqmf_analyze<float>(const ag::Var<float>&, const pqmf::Bank&);
template ag::Var<double> pqmf_analyze<double>(const ag::Var<double>&, const pqmf::Bank&);
template ag::Var<float> noise_fir_synth<float>(ag::Tape<float>*, const ag::Var<float>&, int, int, int,
                                               std::uint64_t, std::int64_t);
template ag::Var<double> noise_fir_synth<double>(ag::Tape<double>*, const ag::Var<double>&, int, int, int,
                                                 std::uint64_t, std::int64_t);
template ag::Var<float> feature_matching<float>(ag::Tape<float>*, const DiscriminatorOutput<float>&,
                                                const DiscriminatorOutput<float>&);
template ag::Var<double> feature_matching<double>(ag::Tape<double>*, const DiscriminatorOutput<double>&,
                                                  const DiscriminatorOutput<double>&);
template ag::Var<float> hinge_discriminator<float>(ag::Tape<float>*, const std::vector<ag::Var<float>>&,
                                                   const std::vector<ag::Var<float>>&);
template ag::Var<double> hinge_discriminator<double>(ag::Tape<double>*, const std::vector<ag::Var<double>>&,
                                                     const std::vector<ag::Var<double>>&);
template ag::Var<float> hinge_generator<float>(ag::Tape<float>*, const std::vector<ag::Var<float>>&);
template ag::Var<double> hinge_generator<double>(ag::Tape<double>*, const std::vector<ag::Var<double>>&);

}  // namespace rave
