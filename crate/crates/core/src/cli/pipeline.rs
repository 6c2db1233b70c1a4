//! File-level batch stages shared by the subcommands.

use super::CliError;
use crate::audio_io::{encode_wav, parse_wav, AudioBuffer};
use crate::dataset::{Manifest, SampleRecord, MANIFEST_NAME};
use crate::dsp::{ImageTensor, RenderPipeline};
use crate::segmenter::{extract_segment, plan_segments, SegmentPolicy};
use rayon::prelude::*;
use std::path::{Path, PathBuf};

pub fn read_wav(path: &Path) -> Result<AudioBuffer, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let (_, mut buf) = parse_wav(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    buf.source_id = file_stem(path);
    Ok(buf)
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

/// Runs `f` on every record on a pool of `jobs` threads; results keep
/// manifest order.
fn par_records<T: Send>(
    manifest: &Manifest,
    jobs: usize,
    f: impl Fn(&SampleRecord) -> Result<T, CliError> + Sync + Send,
) -> Result<Vec<T>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    pool.install(|| manifest.records.par_iter().map(f).collect())
}

/// Cuts every recording into windows and writes one WAV per window plus a
/// manifest into `out_dir`. Segment files are named `<stem>_sNNN.wav`.
pub fn segment_corpus(
    manifest: &Manifest,
    policy: &SegmentPolicy,
    out_dir: &Path,
    jobs: usize,
) -> Result<Manifest, CliError> {
    policy.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let per_record = par_records(manifest, jobs, |r| {
        let src = manifest.resolve(r);
        let audio = read_wav(&src)?;
        let windows = plan_segments(audio.duration_s(), policy)
            .map_err(|e| CliError::Data(format!("{}: {e}", src.display())))?;
        let stem = file_stem(&src);
        let mut out = Vec::with_capacity(windows.len());
        for w in &windows {
            let seg = extract_segment(&audio, w).map_err(|e| CliError::Data(format!("{}: {e}", src.display())))?;
            let name = format!("{stem}_s{:03}.wav", w.index);
            let path = out_dir.join(&name);
            std::fs::write(&path, encode_wav(&seg)).map_err(|e| CliError::io(&path, e))?;
            let mut rec = SampleRecord::new(r.participant_id.clone(), name, r.phq8);
            rec.split = r.split;
            out.push(rec);
        }
        Ok(out)
    })?;
    finish_manifest(manifest, per_record.concat(), out_dir)
}

/// Renders every clip in the manifest to a PNG in `out_dir`.
pub fn render_corpus(
    manifest: &Manifest,
    pipeline: &RenderPipeline,
    out_dir: &Path,
    jobs: usize,
) -> Result<Manifest, CliError> {
    let records = par_records(manifest, jobs, |r| {
        let src = manifest.resolve(r);
        let img = render_file(&src, pipeline)?;
        let name = format!("{}.png", file_stem(&src));
        let path = out_dir.join(&name);
        img.save_png(&path).map_err(|e| CliError::Data(e.to_string()))?;
        let mut rec = SampleRecord::new(r.participant_id.clone(), name, r.phq8);
        rec.split = r.split;
        Ok(rec)
    })?;
    finish_manifest(manifest, records, out_dir)
}

pub fn render_file(path: &Path, pipeline: &RenderPipeline) -> Result<ImageTensor, CliError> {
    let audio = read_wav(path)?;
    pipeline
        .run(&audio)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn finish_manifest(source: &Manifest, records: Vec<SampleRecord>, out_dir: &Path) -> Result<Manifest, CliError> {
    let mut m = Manifest::new(records);
    m.seed = source.seed;
    m.save(&out_dir.join(MANIFEST_NAME))?;
    m.base_dir = Some(out_dir.to_path_buf());
    Ok(m)
}

/// Rewrites relative record paths so they resolve from `new_base`.
pub fn rebase(manifest: &Manifest, new_base: &Path) -> Manifest {
    let same = manifest
        .base_dir
        .as_deref()
        .is_some_and(|b| normalize(b) == normalize(new_base));
    if same {
        return manifest.clone();
    }
    let records = manifest
        .records
        .iter()
        .map(|r| {
            let mut r2 = r.clone();
            r2.path = absolute(&manifest.resolve(r)).to_string_lossy().into_owned();
            r2
        })
        .collect();
    let mut m = manifest.with_records(records);
    m.base_dir = Some(new_base.to_path_buf());
    m
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn normalize(p: &Path) -> PathBuf {
    let p = if p.as_os_str().is_empty() { Path::new(".") } else { p };
    absolute(p)
}
