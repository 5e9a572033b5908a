//! Sample-level synthesis: task timeline, eye kinematics, EOG channels and
//! the seven eye-tracker streams.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use super::{SubjectProfile, SynthSession};
use crate::datamodel::{
    DiopterClass, EogRecording, GazeRecord, Stream, Task, TriggerEvent, TriggerKind, TriggerLog, TriggerTime, EOG_FS,
    GAZE_FS, N_CLASSES, TRIALS_PER_CONDITION,
};
use crate::error::Result;

pub const N_CODE: usize = 7;
const PUPIL: usize = 4;
const DEPTH: usize = 5;
const DISPERSION: usize = 6;

/// How each EOG channel's oscillation amplitude follows the diopter.
const EOG_LOADINGS: [f64; 4] = [1.0, 0.7, -0.8, -0.5];
/// Signed diopter reaches the eye tracker only through fixation depth, and
/// weakly; pupil size and dispersion follow the magnitude. Lenses of equal
/// power and opposite sign are therefore hard to tell apart from gaze alone.
const DEPTH_WEIGHT: f64 = 0.015;
const EOG_FREQS_HZ: [f64; 4] = [17.0, 19.0, 23.0, 29.0];
const EOG_OSC_UV: f64 = 60.0;
// log-amplitude swing and the code at which it saturates
const EOG_LOG_SPAN: f64 = 1.5;
const EOG_CODE_SAT: f64 = 2.0;
const EOG_MOVE_UV: [f64; 4] = [150.0, 120.0, 150.0, 120.0];
const EOG_NOISE_UV: f64 = 4.0;
const BLINK_UV: f64 = 150.0;
/// Electrode drift is mean-reverting with a time constant well below the
/// spacing of same-condition trials. A random walk would let the drift level
/// alone identify a condition block, since conditions run contiguously.
const DRIFT_UV: f64 = 30.0;
const DRIFT_TAU_S: f64 = 1.0;
/// Per-task-instance jitter of the class code.
const TRIAL_JITTER: f64 = 0.15;
const HIPPUS_SD: f64 = 0.3;
const BLINK_RATE: f64 = 0.25;
const POP_RATE: f64 = 0.02;
const DIP_MEAN_S: f64 = 0.3;
const READING_LINE_S: f64 = 2.0;
const READING_WORD_S: f64 = 0.25;
const LEAD_S: f64 = 1.0;

/// Shared class code `u(c)`; diopter enters linearly or through its magnitude.
pub fn class_code(c: DiopterClass) -> [f64; N_CODE] {
    let d = c.diopter() / 3.0;
    let m = 2.0 * d.abs() - 1.0;
    let mut u = [0.0; N_CODE];
    for (k, l) in EOG_LOADINGS.iter().enumerate() {
        u[k] = l * d;
    }
    u[PUPIL] = m;
    u[DEPTH] = DEPTH_WEIGHT * d;
    u[DISPERSION] = 0.5 * m;
    u
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Rest,
    Fixation,
    Interval,
    Pursuit { dir: f64 },
    Reading,
}

#[derive(Debug, Clone)]
struct Epoch {
    start: f64,
    end: f64,
    kind: Kind,
    code: [f64; N_CODE],
    phase: [f64; 4],
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn q(v: f64, scale: f64) -> f64 {
    (v * scale).round() / scale
}

struct Timeline {
    epochs: Vec<Epoch>,
    triggers: Vec<TriggerEvent>,
    duration: f64,
}

fn build_timeline(p: &SubjectProfile, codes: &[[f64; N_CODE]], rng: &mut ChaCha8Rng) -> Timeline {
    let s = &p.schedule;
    let mut order: Vec<usize> = (0..N_CLASSES).collect();
    order.shuffle(rng);

    let mut epochs = Vec::new();
    let mut triggers = Vec::new();
    let mut t = 0.0;
    let push = |epochs: &mut Vec<Epoch>, rng: &mut ChaCha8Rng, t: &mut f64, len: f64, kind: Kind, code: Option<&[f64; N_CODE]>| {
        let mut c = [0.0; N_CODE];
        if let Some(code) = code {
            for (ci, v) in c.iter_mut().zip(code) {
                *ci = v + TRIAL_JITTER * normal(rng);
            }
        }
        let phase = [0; 4].map(|_| rng.random_range(0.0..1.0));
        epochs.push(Epoch {
            start: *t,
            end: *t + len,
            kind,
            code: c,
            phase,
        });
        *t += len;
    };
    let stamp = |t: f64| TriggerTime {
        eog: q(t + p.clock_offset_eog, 1e6),
        gaze: q(t + p.clock_offset_gaze, 1e6),
    };

    push(&mut epochs, rng, &mut t, LEAD_S, Kind::Rest, None);
    for &ci in &order {
        let condition = DiopterClass::from_index(ci).expect("class index in range");
        let code = &codes[ci];
        let event = |time: f64, kind, task, trial: usize| TriggerEvent {
            time: stamp(time),
            kind,
            task,
            trial_index: trial as u32,
            condition,
        };
        for trial in 0..TRIALS_PER_CONDITION {
            triggers.push(event(t, TriggerKind::TaskStart, Task::Fixation, trial));
            push(&mut epochs, rng, &mut t, s.fixation_s, Kind::Fixation, Some(code));
            triggers.push(event(t, TriggerKind::TaskEnd, Task::Fixation, trial));
            push(&mut epochs, rng, &mut t, s.inter_trial_s, Kind::Interval, Some(code));
            let dur = q(rng.random_range(s.pursuit_min_s..=s.pursuit_max_s), 1e3);
            let dir = if trial % 2 == 0 { 1.0 } else { -1.0 };
            triggers.push(event(t, TriggerKind::TaskStart, Task::Pursuit, trial));
            push(&mut epochs, rng, &mut t, dur, Kind::Pursuit { dir }, Some(code));
            triggers.push(event(t, TriggerKind::TaskEnd, Task::Pursuit, trial));
            push(&mut epochs, rng, &mut t, s.post_pursuit_s, Kind::Rest, Some(code));
        }
        triggers.push(event(t, TriggerKind::TaskStart, Task::Reading, 0));
        push(&mut epochs, rng, &mut t, s.reading_s, Kind::Reading, Some(code));
        // Every trial segment of a condition carries a slice of its one reading
        // task, so per-instance jitter there would be shared by all of them
        // and identify the condition even with no class effect.
        epochs.last_mut().expect("just pushed").code = *code;
        triggers.push(event(t, TriggerKind::TaskEnd, Task::Reading, 0));
        push(&mut epochs, rng, &mut t, s.condition_gap_s, Kind::Rest, None);
    }
    push(&mut epochs, rng, &mut t, LEAD_S, Kind::Rest, None);
    Timeline {
        epochs,
        triggers,
        duration: t,
    }
}

/// Index of the epoch containing `t`, advancing from `hint`.
fn epoch_at(epochs: &[Epoch], t: f64, hint: &mut usize) -> usize {
    while *hint + 1 < epochs.len() && t >= epochs[*hint].end {
        *hint += 1;
    }
    *hint
}

/// Horizontal and vertical gaze angle in [-1, 1].
fn eye_position(e: &Epoch, t: f64) -> (f64, f64) {
    match e.kind {
        Kind::Rest | Kind::Fixation | Kind::Interval => (0.0, 0.0),
        Kind::Pursuit { dir } => {
            let frac = (t - e.start) / (e.end - e.start);
            (dir * (-0.8 + 1.6 * frac), 0.0)
        }
        Kind::Reading => {
            let rel = t - e.start;
            let line = (rel / READING_LINE_S).floor();
            let word = ((rel - line * READING_LINE_S) / READING_WORD_S).floor().min(7.0);
            (-0.8 + 0.2 * word, 0.5 - 0.2 * (line % 6.0))
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Blink {
    start: f64,
    end: f64,
}

fn draw_blinks(duration: f64, rng: &mut ChaCha8Rng) -> Vec<Blink> {
    let gap = Exp::new(BLINK_RATE).expect("positive rate");
    let mut out = Vec::new();
    let mut t = LEAD_S;
    loop {
        t += 0.3 + gap.sample(rng);
        let len = rng.random_range(0.1..0.2);
        if t + len >= duration - LEAD_S {
            break;
        }
        out.push(Blink { start: t, end: t + len });
        t += len;
    }
    out
}

/// 0 outside blinks, a Hann bump peaking at 1 inside.
fn blink_level(blinks: &[Blink], t: f64) -> f64 {
    let k = blinks.partition_point(|b| b.end <= t);
    match blinks.get(k) {
        Some(b) if t >= b.start => {
            let x = (t - b.start) / (b.end - b.start);
            0.5 * (1.0 - (std::f64::consts::TAU * x).cos())
        }
        _ => 0.0,
    }
}

/// Linear model of one payload key in the latent signals.
#[derive(Debug, Clone, Copy)]
struct KeyModel {
    base: f64,
    gx: f64,
    gy: f64,
    pupil: f64,
    depth: f64,
    disp: f64,
    noise: f64,
}

const fn km(base: f64, gx: f64, gy: f64, pupil: f64, noise: f64) -> KeyModel {
    KeyModel {
        base,
        gx,
        gy,
        pupil,
        depth: 0.0,
        disp: 0.0,
        noise,
    }
}

fn key_model(key: &str) -> KeyModel {
    let k = key.trim_end_matches("_2d").trim_end_matches("_3d");
    match k {
        "diameter" | "diameter_2d_by_3d_detector" => km(32.0, 0.0, 0.0, 3.0, 0.3),
        "diameter_3d" => km(3.6, 0.0, 0.0, 0.35, 0.03),
        "ellipse_axis_a" => km(33.0, 0.0, 0.0, 3.0, 0.4),
        "ellipse_axis_b" => km(29.0, 0.0, 0.0, 2.6, 0.4),
        "circle_3d_radius" => km(1.8, 0.0, 0.0, 0.17, 0.015),
        "norm_pos_x" => km(0.5, 0.12, 0.0, 0.0, 0.002),
        "norm_pos_y" => km(0.5, 0.0, 0.12, 0.0, 0.002),
        "ellipse_center_x" | "location_x" => km(96.0, 23.0, 0.0, 0.0, 0.4),
        "ellipse_center_y" | "location_y" => km(96.0, 0.0, 23.0, 0.0, 0.4),
        "ellipse_angle" => km(90.0, 15.0, 8.0, 0.0, 2.0),
        "sphere_center_x" => km(2.0, 0.0, 0.0, 0.0, 0.05),
        "sphere_center_y" => km(1.0, 0.0, 0.0, 0.0, 0.05),
        "sphere_center_z" => km(40.0, 0.0, 0.0, 0.0, 0.1),
        "sphere_radius" => km(12.0, 0.0, 0.0, 0.0, 0.01),
        "projected_sphere_center_x" => km(94.0, 0.0, 0.0, 0.0, 0.2),
        "projected_sphere_center_y" => km(98.0, 0.0, 0.0, 0.0, 0.2),
        "projected_sphere_axis_a" | "projected_sphere_axis_b" => km(82.0, 0.0, 0.0, 0.0, 0.2),
        "projected_sphere_angle" => km(90.0, 0.0, 0.0, 0.0, 0.5),
        "circle_3d_center_x" => km(2.0, 5.0, 0.0, 0.0, 0.05),
        "circle_3d_center_y" => km(1.0, 0.0, 5.0, 0.0, 0.05),
        "circle_3d_center_z" => km(29.0, 0.0, 0.0, 0.0, 0.1),
        "circle_3d_normal_x" | "gaze_direction_3d_x" => km(0.0, 0.35, 0.0, 0.0, 0.005),
        "circle_3d_normal_y" | "gaze_direction_3d_y" => km(0.0, 0.0, 0.35, 0.0, 0.005),
        "circle_3d_normal_z" => km(-0.93, 0.0, 0.0, 0.0, 0.005),
        "gaze_direction_3d_z" => km(0.93, 0.0, 0.0, 0.0, 0.003),
        "circle_3d_normal_theta" => km(1.57, 0.0, 0.35, 0.0, 0.005),
        "circle_3d_normal_phi" => km(-1.57, 0.35, 0.0, 0.0, 0.005),
        "gaze_origin_3d_x" => km(20.0, 0.0, 0.0, 0.0, 0.1),
        "gaze_origin_3d_y" => km(15.0, 0.0, 0.0, 0.0, 0.1),
        "gaze_origin_3d_z" => km(-20.0, 0.0, 0.0, 0.0, 0.1),
        "gaze_point_3d_x" | "fixation_point_3d_x" => km(0.0, 180.0, 0.0, 0.0, 2.0),
        "gaze_point_3d_y" | "fixation_point_3d_y" => km(0.0, 0.0, 180.0, 0.0, 2.0),
        "gaze_point_3d_z" | "fixation_point_3d_z" => KeyModel {
            depth: 60.0,
            ..km(500.0, 0.0, 0.0, 0.0, 8.0)
        },
        "gaze_norm_pos_x" | "fixation_norm_pos_x" => km(0.5, 0.3, 0.0, 0.0, 0.003),
        "gaze_norm_pos_y" | "fixation_norm_pos_y" => km(0.5, 0.0, 0.3, 0.0, 0.003),
        "fixation_dispersion" => KeyModel {
            disp: 0.25,
            ..km(1.0, 0.0, 0.0, 0.0, 0.08)
        },
        // fixation_duration and blink_type are set by the event generators
        _ => km(0.0, 0.0, 0.0, 0.0, 0.0),
    }
}

/// Per-subject additive offset and multiplicative gain of one key, shared
/// across classes.
#[derive(Debug, Clone, Copy)]
struct KeyTransform {
    model: KeyModel,
    offset: f64,
    gain: f64,
}

fn key_transforms(stream: Stream, confound: f64, rng: &mut ChaCha8Rng) -> Vec<KeyTransform> {
    stream
        .keys()
        .iter()
        .map(|k| {
            let model = key_model(k);
            KeyTransform {
                model,
                offset: confound * 3.0 * model.noise * normal(rng),
                gain: (0.1 * confound * normal(rng)).exp(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Latent {
    gx: f64,
    gy: f64,
    pupil: f64,
    depth: f64,
    disp: f64,
}

fn payload(tr: &[KeyTransform], l: &Latent, noise_sd: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    tr.iter()
        .map(|t| {
            let m = &t.model;
            let signal = m.gx * l.gx + m.gy * l.gy + m.pupil * l.pupil + m.depth * l.depth + m.disp * l.disp;
            let v = m.base + t.offset + t.gain * signal + noise_sd * m.noise * normal(rng);
            q(v, 1e4)
        })
        .collect()
}

fn confidence(rng: &mut ChaCha8Rng, dip: bool, blink: f64) -> f64 {
    let c = if blink > 0.2 {
        rng.random_range(0.0..0.3)
    } else if dip {
        rng.random_range(0.05..0.4)
    } else {
        rng.random_range(0.85..0.99)
    };
    q(c, 1e3)
}

fn synth_eog(p: &SubjectProfile, tl: &Timeline, blinks: &[Blink], rng: &mut ChaCha8Rng) -> Result<EogRecording> {
    let n = (tl.duration * EOG_FS).floor() as usize;
    let gains = [0; 4].map(|_| (0.1 * p.confound_scale * normal(rng)).exp());
    let drift_a = (-1.0 / (DRIFT_TAU_S * EOG_FS)).exp();
    let drift_s = DRIFT_UV * (1.0 - drift_a * drift_a).sqrt();
    let mut drift = [0; 4].map(|_| DRIFT_UV * normal(rng));
    let pop_p = POP_RATE / EOG_FS;

    let mut timestamps = Vec::with_capacity(n);
    let mut channels: [Vec<f64>; 4] = Default::default();
    for ch in channels.iter_mut() {
        ch.reserve(n);
    }
    let mut hint = 0;
    for i in 0..n {
        let t = i as f64 / EOG_FS;
        let e = &tl.epochs[epoch_at(&tl.epochs, t, &mut hint)];
        let (gx, gy) = eye_position(e, t);
        let blink = blink_level(blinks, t);
        for c in 0..4 {
            drift[c] = drift_a * drift[c] + drift_s * normal(rng);
            let movement = EOG_MOVE_UV[c] * if c % 2 == 0 { gx } else { gy };
            let amp = EOG_OSC_UV * (EOG_LOG_SPAN * (e.code[c] / EOG_CODE_SAT).tanh()).exp();
            let osc = amp * (std::f64::consts::TAU * (EOG_FREQS_HZ[c] * t + e.phase[c])).sin();
            let blink_uv = if c % 2 == 1 { BLINK_UV * blink } else { 0.0 };
            let mut v = gains[c] * (movement + osc) + blink_uv + drift[c] + p.noise_sd * EOG_NOISE_UV * normal(rng);
            if rng.random::<f64>() < pop_p {
                v += 400.0 * if rng.random::<bool>() { 1.0 } else { -1.0 };
            }
            channels[c].push(q(v, 1e3));
        }
        timestamps.push(q(t + p.clock_offset_eog, 1e6));
    }
    EogRecording::new(p.subject_id.clone(), timestamps, channels)
}

/// Two-state Markov chain of low-confidence bursts, one step per frame.
struct DipChain {
    on: bool,
    p_on: f64,
    p_off: f64,
}

impl DipChain {
    fn new(rate: f64) -> Self {
        Self {
            on: false,
            p_on: rate / GAZE_FS,
            p_off: 1.0 / (DIP_MEAN_S * GAZE_FS),
        }
    }

    fn step(&mut self, rng: &mut ChaCha8Rng) -> bool {
        let u: f64 = rng.random();
        self.on = if self.on { u >= self.p_off } else { u < self.p_on };
        self.on
    }
}

fn synth_gaze(p: &SubjectProfile, tl: &Timeline, blinks: &[Blink], rng: &mut ChaCha8Rng) -> Vec<GazeRecord> {
    let eye_streams = [[Stream::PupilEye0_2d, Stream::PupilEye0_3d], [Stream::PupilEye1_2d, Stream::PupilEye1_3d]];
    let transforms: Vec<Vec<KeyTransform>> = Stream::ALL.iter().map(|&s| key_transforms(s, p.confound_scale, rng)).collect();
    let n = (tl.duration * GAZE_FS).floor() as usize;
    let hippus_a = (-1.0 / GAZE_FS).exp();
    let hippus_s = HIPPUS_SD * (1.0 - hippus_a * hippus_a).sqrt();
    let mut hippus = 0.0;
    let mut dips = [DipChain::new(p.confidence_dip_rate), DipChain::new(p.confidence_dip_rate)];
    let mut out = Vec::with_capacity(n * 5 + 4096);
    let mut hint = 0;
    let stamp = |t: f64| q(t + p.clock_offset_gaze, 1e6);

    for k in 0..n {
        let t0 = k as f64 / GAZE_FS;
        hippus = hippus_a * hippus + hippus_s * normal(rng);
        let mut conf_eye = [0.0; 2];
        let mut first_t = 0.0;
        for (eye, streams) in eye_streams.iter().enumerate() {
            let t = t0 + 0.002 * eye as f64 + rng.random_range(-0.0004..0.0004);
            let e = &tl.epochs[epoch_at(&tl.epochs, t.max(0.0), &mut hint)];
            let (gx, gy) = eye_position(e, t);
            let blink = blink_level(blinks, t);
            let dip = dips[eye].step(rng);
            let conf = confidence(rng, dip, blink);
            conf_eye[eye] = conf;
            let latent = Latent {
                gx: gx + 0.01 * normal(rng),
                gy: gy + 0.01 * normal(rng),
                pupil: e.code[PUPIL] + hippus - 2.0 * blink,
                depth: e.code[DEPTH],
                disp: e.code[DISPERSION],
            };
            let noise = if dip { 5.0 * p.noise_sd } else { p.noise_sd };
            if eye == 0 {
                first_t = t;
            }
            for &s in streams {
                let pl = payload(&transforms[s.index()], &latent, noise, rng);
                out.push(GazeRecord {
                    stream: s,
                    timestamp: stamp(t.max(0.0)),
                    confidence: conf,
                    payload: pl,
                });
            }
        }
        // binocular gaze mapped shortly after the eye-0 frame
        let t = first_t + 0.001;
        let e = &tl.epochs[epoch_at(&tl.epochs, t.max(0.0), &mut hint)];
        let (gx, gy) = eye_position(e, t);
        let latent = Latent {
            gx: gx + 0.01 * normal(rng),
            gy: gy + 0.01 * normal(rng),
            pupil: 0.0,
            depth: e.code[DEPTH],
            disp: 0.0,
        };
        out.push(GazeRecord {
            stream: Stream::Gaze,
            timestamp: stamp(t.max(0.0)),
            confidence: conf_eye[0].min(conf_eye[1]),
            payload: payload(&transforms[Stream::Gaze.index()], &latent, p.noise_sd, rng),
        });
    }

    synth_fixations(p, tl, &transforms[Stream::Fixation.index()], rng, &mut out);
    for b in blinks {
        for (t, kind) in [(b.start, 1.0), (b.end, 2.0)] {
            out.push(GazeRecord {
                stream: Stream::Blink,
                timestamp: stamp(t),
                confidence: q(rng.random_range(0.8..0.95), 1e3),
                payload: vec![kind],
            });
        }
    }
    out.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    out
}

/// Detector output: back-to-back fixations during fixation trials, one per
/// word during reading.
fn synth_fixations(p: &SubjectProfile, tl: &Timeline, tr: &[KeyTransform], rng: &mut ChaCha8Rng, out: &mut Vec<GazeRecord>) {
    let mut emit = |start: f64, dur_s: f64, e: &Epoch, rng: &mut ChaCha8Rng| {
        let (gx, gy) = eye_position(e, start);
        let latent = Latent {
            gx,
            gy,
            pupil: 0.0,
            depth: e.code[DEPTH],
            disp: e.code[DISPERSION],
        };
        let mut pl = payload(tr, &latent, p.noise_sd, rng);
        pl[0] = pl[0].max(0.05);
        pl[1] = q(dur_s * 1000.0, 1e4);
        out.push(GazeRecord {
            stream: Stream::Fixation,
            timestamp: q(start + p.clock_offset_gaze, 1e6),
            confidence: q(rng.random_range(0.85..0.99), 1e3),
            payload: pl,
        });
    };
    for e in &tl.epochs {
        match e.kind {
            Kind::Fixation => {
                let mut t = e.start + 0.05;
                while t + 0.28 <= e.end {
                    emit(t, 0.28, e, rng);
                    t += 0.3;
                }
            }
            Kind::Reading => {
                let mut t = e.start + 0.03;
                while t + 0.2 <= e.end {
                    emit(t, 0.2, e, rng);
                    t += READING_WORD_S;
                }
            }
            _ => {}
        }
    }
}

pub(super) fn generate(p: &SubjectProfile) -> Result<SynthSession> {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let codes: Vec<[f64; N_CODE]> = DiopterClass::all()
        .map(|c| {
            let u = class_code(c);
            let mut z = [0.0; N_CODE];
            for (zk, uk) in z.iter_mut().zip(u) {
                *zk = p.class_effect_scale * uk + p.confound_scale * normal(&mut rng);
            }
            z
        })
        .collect();
    let tl = build_timeline(p, &codes, &mut rng);
    let blinks = draw_blinks(tl.duration, &mut rng);
    // independent streams so the EOG does not depend on how many gaze draws were made
    let mut eog_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let mut gaze_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let eog = synth_eog(p, &tl, &blinks, &mut eog_rng)?;
    let gaze = synth_gaze(p, &tl, &blinks, &mut gaze_rng);
    let triggers = TriggerLog::new(tl.triggers)?;
    Ok(SynthSession { eog, gaze, triggers })
}
