//! Waveform and manifest I/O, plus the deterministic accented-speech synthesizer.
//!
//! Each character is rendered as a two-tone burst; an [`AccentSpec`] warps the
//! tone frequencies and durations, tilts the spectrum and adds noise. Every
//! output byte is a function of the spec and the input texts.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::vocab;

pub const SAMPLE_RATE: u32 = 16_000;
/// 60 ms per character at 16 kHz.
pub const BASE_CHAR_SAMPLES: f64 = 960.0;
const TONE_AMPLITUDE: f64 = 0.4;
/// 5 ms linear fade at 16 kHz.
const FADE_SAMPLES: usize = 80;
const PEAK: f64 = 0.8;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Data("sample rate must be positive".into()));
        }
        if let Some(s) = samples.iter().find(|s| !(s.abs() <= 1.0)) {
            return Err(Error::Data(format!("sample {s} outside [-1, 1]")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::NotPcm16 {
            path: path.to_path_buf(),
            detail: format!("{:?} with {} bits per sample", spec.sample_format, spec.bits_per_sample),
        });
    }
    if spec.channels != 1 {
        return Err(Error::ChannelCount { path: path.to_path_buf(), channels: spec.channels });
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| map_hound(path, e))?;
    Waveform::new(samples, spec.sample_rate)
}

fn map_hound(path: &Path, e: hound::Error) -> Error {
    let path = path.to_path_buf();
    match e {
        hound::Error::Unsupported => Error::NotPcm16 { path, detail: "unsupported format tag".into() },
        hound::Error::IoError(io) if io.kind() == std::io::ErrorKind::NotFound => Error::MissingFile(path),
        other => Error::TruncatedHeader { path, detail: other.to_string() },
    }
}

pub fn quantize(sample: f64) -> i16 {
    (sample * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| hound_io(path, e))?;
    for &s in &w.samples {
        writer.write_sample(quantize(s)).map_err(|e| hound_io(path, e))?;
    }
    writer.finalize().map_err(|e| hound_io(path, e))?;
    Ok(())
}

fn hound_io(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Data(format!("{}: {other}", path.display())),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ManifestRole {
    GenericUnlabeled,
    AccentUnlabeled,
    Labeled,
    Eval,
}

impl ManifestRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ManifestRole::GenericUnlabeled => "generic_unlabeled",
            ManifestRole::AccentUnlabeled => "accent_unlabeled",
            ManifestRole::Labeled => "labeled",
            ManifestRole::Eval => "eval",
        }
    }

    fn carries_transcripts(self) -> bool {
        matches!(self, ManifestRole::Labeled | ManifestRole::Eval)
    }
}

impl fmt::Display for ManifestRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ManifestRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generic_unlabeled" => Ok(ManifestRole::GenericUnlabeled),
            "accent_unlabeled" => Ok(ManifestRole::AccentUnlabeled),
            "labeled" => Ok(ManifestRole::Labeled),
            "eval" => Ok(ManifestRole::Eval),
            other => Err(Error::Data(format!("unknown manifest role `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AudioSource {
    Path(PathBuf),
    Inline(Waveform),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub audio: AudioSource,
    pub transcript: Option<String>,
}

impl Utterance {
    pub fn load_audio(&self) -> Result<Waveform> {
        match &self.audio {
            AudioSource::Path(p) => read_wav(p),
            AudioSource::Inline(w) => Ok(w.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub utterances: Vec<Utterance>,
    pub role: ManifestRole,
    pub accent_tag: Option<String>,
}

impl Manifest {
    /// Checks id uniqueness, transcript vocabulary and role requirements.
    pub fn new(utterances: Vec<Utterance>, role: ManifestRole, accent_tag: Option<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for u in &utterances {
            if !seen.insert(u.id.as_str()) {
                return Err(Error::DuplicateId(u.id.clone()));
            }
            if let Some(t) = &u.transcript {
                vocab::encode(t)?;
            } else if role == ManifestRole::Labeled {
                return Err(Error::Data(format!("labeled manifest row `{}` has no transcript", u.id)));
            }
        }
        if role == ManifestRole::AccentUnlabeled && accent_tag.is_none() {
            return Err(Error::Data("accent_unlabeled manifest needs an accent tag".into()));
        }
        Ok(Self { utterances, role, accent_tag })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn header_line(&self) -> String {
        format!("#role={}\taccent={}", self.role, self.accent_tag.as_deref().unwrap_or(""))
    }

    /// Writes the TSV; audio paths are stored relative to the manifest's
    /// directory when possible. Inline audio cannot be serialized.
    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new(""));
        let mut out = self.header_line();
        out.push('\n');
        for u in &self.utterances {
            let AudioSource::Path(p) = &u.audio else {
                return Err(Error::Data(format!("utterance `{}` has inline audio", u.id)));
            };
            let rel = p.strip_prefix(base).unwrap_or(p);
            out.push_str(&u.id);
            out.push('\t');
            out.push_str(&rel.to_string_lossy());
            if let Some(t) = &u.transcript {
                out.push('\t');
                out.push_str(t);
            }
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let bad = |line: usize, msg: String| Error::Manifest { path: path.to_path_buf(), line, msg };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad(1, "missing header line".into()))?;
    let header = header.strip_prefix('#').ok_or_else(|| bad(1, "header must start with `#`".into()))?;
    let mut role = None;
    let mut accent = None;
    for field in header.split('\t') {
        match field.split_once('=') {
            Some(("role", v)) => role = Some(v.parse::<ManifestRole>().map_err(|e| bad(1, e.to_string()))?),
            Some(("accent", v)) => accent = (!v.is_empty()).then(|| v.to_string()),
            _ => return Err(bad(1, format!("unexpected header field `{field}`"))),
        }
    }
    let role = role.ok_or_else(|| bad(1, "header lacks role".into()))?;

    let mut utterances = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 2 || cols.len() > 3 {
            return Err(bad(lineno, format!("expected 2 or 3 tab-separated columns, got {}", cols.len())));
        }
        let id = cols[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        let audio = PathBuf::from(cols[1]);
        let audio = if audio.is_absolute() { audio } else { base.join(audio) };
        let transcript = match cols.get(2) {
            Some(t) if !t.is_empty() => Some(vocab::normalize_transcript(t)?),
            _ => None,
        };
        if transcript.is_none() && role == ManifestRole::Labeled {
            return Err(bad(lineno, format!("labeled row `{id}` is missing its transcript")));
        }
        utterances.push(Utterance { id, audio: AudioSource::Path(audio), transcript });
    }
    Manifest::new(utterances, role, accent)
}

/// Parametric accent transform applied by the synthesizer.
#[derive(Clone, Debug, PartialEq)]
pub struct AccentSpec {
    pub accent_id: String,
    pub formant_factor: f64,
    pub rate_factor: f64,
    pub tilt: f64,
    /// `f64::INFINITY` disables noise.
    pub snr_db: f64,
    pub seed: u64,
}

impl AccentSpec {
    pub fn canonical(seed: u64) -> Self {
        Self {
            accent_id: "canonical".into(),
            formant_factor: 1.0,
            rate_factor: 1.0,
            tilt: 0.0,
            snr_db: f64::INFINITY,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_range = |v: f64| (0.5..=2.0).contains(&v);
        if !in_range(self.formant_factor) || !in_range(self.rate_factor) {
            return Err(Error::AccentSpec(format!(
                "formant_factor {} and rate_factor {} must lie in [0.5, 2.0]",
                self.formant_factor, self.rate_factor
            )));
        }
        if !(-1.0..=1.0).contains(&self.tilt) {
            return Err(Error::AccentSpec(format!("tilt {} outside [-1, 1]", self.tilt)));
        }
        if self.snr_db.is_nan() {
            return Err(Error::AccentSpec("snr_db is NaN".into()));
        }
        if self.accent_id.is_empty() || self.accent_id.contains(['\t', '/', '\n']) {
            return Err(Error::AccentSpec(format!("bad accent id {:?}", self.accent_id)));
        }
        Ok(())
    }

    pub fn char_samples(&self) -> usize {
        (self.rate_factor * BASE_CHAR_SAMPLES).round() as usize
    }

    /// The two tone frequencies (Hz) for a vocabulary character.
    pub fn tones(&self, c: char) -> Option<(f64, f64)> {
        let i = vocab::char_index(c)? as f64;
        Some((self.formant_factor * (300.0 + 40.0 * i), self.formant_factor * (1200.0 + 60.0 * i)))
    }
}

/// Renders one utterance. `stream` selects an independent noise stream so
/// utterances can be generated in any order.
pub fn synth_waveform(spec: &AccentSpec, text: &str, stream: u64) -> Result<Waveform> {
    spec.validate()?;
    let d = spec.char_samples();
    let sr = f64::from(SAMPLE_RATE);
    let mut x = Vec::with_capacity(d * text.chars().count());
    for c in text.chars() {
        let (f1, f2) = spec.tones(c).ok_or_else(|| Error::IllegalChar { ch: c, text: text.to_string() })?;
        for n in 0..d {
            let env = 1.0f64.min(n as f64 / FADE_SAMPLES as f64).min((d - 1 - n) as f64 / FADE_SAMPLES as f64);
            let t = n as f64 / sr;
            let s = TONE_AMPLITUDE
                * ((2.0 * std::f64::consts::PI * f1 * t).sin() + (2.0 * std::f64::consts::PI * f2 * t).sin());
            x.push(env * s);
        }
    }
    let mut prev = 0.0;
    for v in x.iter_mut() {
        *v += spec.tilt * prev;
        prev = *v;
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let g = PEAK / peak;
        x.iter_mut().for_each(|v| *v *= g);
    }
    if spec.snr_db.is_finite() && !x.is_empty() {
        let power = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        let sigma = (power / 10f64.powf(spec.snr_db / 10.0)).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(stream);
        for v in x.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = (*v + sigma * z).clamp(-1.0, 1.0);
        }
    }
    Waveform::new(x, SAMPLE_RATE)
}

/// Renders `texts` to `out_dir/<accent>-<index>.wav` and writes
/// `out_dir/manifest.tsv`. Transcripts are kept only for roles that carry them.
pub fn synth_corpus(spec: &AccentSpec, texts: &[String], role: ManifestRole, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    for t in texts {
        vocab::encode(t)?;
    }
    fs::create_dir_all(out_dir)?;
    let mut utterances = Vec::with_capacity(texts.len());
    for (i, text) in texts.iter().enumerate() {
        let id = format!("{}-{:05}", spec.accent_id, i);
        let wav = synth_waveform(spec, text, i as u64)?;
        let path = out_dir.join(format!("{id}.wav"));
        write_wav(&path, &wav)?;
        utterances.push(Utterance {
            id,
            audio: AudioSource::Path(path),
            transcript: role.carries_transcripts().then(|| text.clone()),
        });
    }
    let accent_tag = Some(spec.accent_id.clone());
    let manifest = Manifest::new(utterances, role, accent_tag)?;
    manifest.save(&out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}

/// Small closed word list used to build synthetic transcripts.
pub const WORDS: &[&str] = &[
    "the", "cat", "dog", "sun", "red", "big", "run", "see", "map", "top", "box", "fan", "hat", "jam", "kid", "lip",
    "mud", "net", "owl", "pig", "quiz", "rug", "sky", "toy", "van", "web", "yak", "zip", "we", "go", "it's", "i'm",
];

/// Deterministic random sentences of `min_words..=max_words` words.
pub fn generate_texts(n: usize, seed: u64, min_words: usize, max_words: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let k = rng.gen_range(min_words..=max_words);
            (0..k).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dft_mag(x: &[f64], bin: usize) -> f64 {
        let n = x.len() as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (k, v) in x.iter().enumerate() {
            let a = -2.0 * std::f64::consts::PI * bin as f64 * k as f64 / n;
            re += v * a.cos();
            im += v * a.sin();
        }
        (re * re + im * im).sqrt()
    }

    #[test]
    fn canonical_a_has_peaks_at_300_and_1200() {
        let w = synth_waveform(&AccentSpec::canonical(0), "a", 0).unwrap();
        assert_eq!(w.len(), 960);
        // 960 samples at 16 kHz: bin spacing 16.67 Hz, so 300 Hz = bin 18, 1200 Hz = bin 72.
        let mags: Vec<f64> = (0..480).map(|b| dft_mag(&w.samples, b)).collect();
        let mut order: Vec<usize> = (0..480).collect();
        order.sort_by(|a, b| mags[*b].total_cmp(&mags[*a]));
        let mut top = vec![order[0], order[1]];
        top.sort();
        assert_eq!(top, vec![18, 72]);
    }

    #[test]
    fn duration_rule() {
        let spec = AccentSpec { rate_factor: 2.0, ..AccentSpec::canonical(1) };
        assert_eq!(synth_waveform(&spec, "ab", 0).unwrap().len(), 3840);
    }

    #[test]
    fn seed_only_changes_noise() {
        let a = AccentSpec { snr_db: 20.0, ..AccentSpec::canonical(1) };
        let b = AccentSpec { seed: 2, ..a.clone() };
        let wa = synth_waveform(&a, "hi", 0).unwrap();
        let wb = synth_waveform(&b, "hi", 0).unwrap();
        assert_eq!(wa.len(), wb.len());
        assert_ne!(wa, wb);
        let clean = synth_waveform(&AccentSpec::canonical(9), "hi", 0).unwrap();
        assert_eq!(clean, synth_waveform(&AccentSpec::canonical(10), "hi", 0).unwrap());
    }

    #[test]
    fn rejects_out_of_range_spec() {
        let s = AccentSpec { formant_factor: 2.5, ..AccentSpec::canonical(0) };
        assert!(matches!(synth_waveform(&s, "a", 0), Err(Error::AccentSpec(_))));
        assert!(matches!(
            synth_waveform(&AccentSpec::canonical(0), "a1", 0),
            Err(Error::IllegalChar { ch: '1', .. })
        ));
    }

    #[test]
    fn quantization_scale() {
        assert_eq!(quantize(32767.0 / 32768.0), 32767);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(-1.0), -32768);
    }

    #[test]
    fn texts_are_in_vocabulary() {
        for t in generate_texts(50, 3, 1, 3) {
            vocab::encode(&t).unwrap();
        }
    }
}
