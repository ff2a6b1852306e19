use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generate::{plan_seed, plan_variations, render_utterance, utterance_id, GenerationConfig, Utterance};
use super::icd::IcdCode;
use super::vocab::Vocabulary;
use crate::audio::SpeakerProfile;
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: &str = "manifest-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceRecord {
    pub id: String,
    pub code: String,
    pub speaker: u32,
    pub variation: usize,
    /// Take index used for each word.
    pub takes: Vec<u32>,
    pub seed: u64,
    pub transcript: String,
}

/// Recipe for a dataset: everything needed to regenerate every utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: String,
    pub config: GenerationConfig,
    pub codes: Vec<IcdCode>,
    /// Content words in id order (specials excluded).
    pub vocabulary: Vec<String>,
    pub speakers: Vec<SpeakerProfile>,
    pub train_speakers: Vec<u32>,
    pub test_speakers: Vec<u32>,
    pub utterances: Vec<UtteranceRecord>,
}

/// Plan every (code, speaker, variation) record. No audio is rendered.
pub fn build_manifest(cfg: &GenerationConfig, codes: &[IcdCode]) -> Result<DatasetManifest> {
    cfg.validate()?;
    if codes.is_empty() {
        return Err(Error::Argument("no ICD codes to generate".into()));
    }
    let vocab = Vocabulary::build(codes);
    let speakers: Vec<SpeakerProfile> = (0..cfg.speakers).map(|s| cfg.speaker(s)).collect();
    let mut utterances = Vec::new();
    for code in codes {
        for sp in &speakers {
            let plan = plan_variations(
                code.words.len(),
                cfg.repeats,
                cfg.cap,
                plan_seed(cfg, &code.code, sp.id),
            )?;
            for (v, takes) in plan.into_iter().enumerate() {
                utterances.push(UtteranceRecord {
                    id: utterance_id(&code.code, sp.id, v),
                    code: code.code.clone(),
                    speaker: sp.id,
                    variation: v,
                    takes,
                    seed: cfg.utterance_seed(&code.code, sp.id, v),
                    transcript: code.description(),
                });
            }
        }
    }
    Ok(DatasetManifest {
        version: MANIFEST_VERSION.to_string(),
        config: cfg.clone(),
        codes: codes.to_vec(),
        vocabulary: vocab.content_words().to_vec(),
        train_speakers: speakers.iter().map(|s| s.id).collect(),
        test_speakers: Vec::new(),
        speakers,
        utterances,
    })
}

impl DatasetManifest {
    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::from_content_words(&self.vocabulary)
    }

    pub fn speaker_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.utterances.iter().map(|u| u.speaker).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    fn lookup(&self) -> Result<(BTreeMap<&str, &IcdCode>, BTreeMap<u32, &SpeakerProfile>)> {
        let codes = self.codes.iter().map(|c| (c.code.as_str(), c)).collect();
        let speakers = self.speakers.iter().map(|s| (s.id, s)).collect();
        Ok((codes, speakers))
    }

    fn render_with(
        &self,
        rec: &UtteranceRecord,
        vocab: &Vocabulary,
        codes: &BTreeMap<&str, &IcdCode>,
        speakers: &BTreeMap<u32, &SpeakerProfile>,
    ) -> Result<Utterance> {
        let code = codes
            .get(rec.code.as_str())
            .ok_or_else(|| Error::Validation(format!("record {} names unknown code {}", rec.id, rec.code)))?;
        let speaker = speakers.get(&rec.speaker).ok_or_else(|| {
            Error::Validation(format!("record {} names unknown speaker {}", rec.id, rec.speaker))
        })?;
        Ok(Utterance {
            id: rec.id.clone(),
            code: rec.code.clone(),
            speaker: rec.speaker,
            variation: rec.variation,
            spectrogram: render_utterance(code, speaker, &rec.takes, rec.seed, &self.config)?,
            target: vocab.target(&code.words)?,
        })
    }

    /// Regenerate one record's features.
    pub fn render(&self, rec: &UtteranceRecord) -> Result<Utterance> {
        let vocab = self.vocabulary()?;
        let (codes, speakers) = self.lookup()?;
        self.render_with(rec, &vocab, &codes, &speakers)
    }

    /// Regenerate every record, in manifest order. Work is spread over the
    /// rayon pool; each record depends only on its own seed.
    pub fn materialize(&self) -> Result<Vec<Utterance>> {
        let vocab = self.vocabulary()?;
        let (codes, speakers) = self.lookup()?;
        self.utterances
            .par_iter()
            .map(|rec| self.render_with(rec, &vocab, &codes, &speakers))
            .collect()
    }

    /// Keep only the records accepted by `keep`.
    pub fn filtered(&self, keep: impl Fn(&UtteranceRecord) -> bool) -> DatasetManifest {
        DatasetManifest {
            utterances: self.utterances.iter().filter(|r| keep(r)).cloned().collect(),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: DatasetManifest =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Format(format!(
                "manifest version {:?}, expected {MANIFEST_VERSION:?}",
                m.version
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Leave-one-speaker-out partition.
pub fn split_by_speaker(
    manifest: &DatasetManifest,
    held_out: u32,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if !manifest.utterances.iter().any(|u| u.speaker == held_out) {
        return Err(Error::Argument(format!(
            "speaker {held_out} does not occur in the manifest"
        )));
    }
    let mut train = manifest.filtered(|u| u.speaker != held_out);
    let mut test = manifest.filtered(|u| u.speaker == held_out);
    train.train_speakers = train.speaker_ids();
    train.test_speakers = vec![held_out];
    test.train_speakers = train.train_speakers.clone();
    test.test_speakers = vec![held_out];
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{builtin_icd_list, variation_count};

    fn small_manifest() -> DatasetManifest {
        let codes: Vec<IcdCode> = builtin_icd_list().into_iter().take(4).collect();
        let cfg = GenerationConfig {
            speakers: 3,
            cap: 4,
            seed: 11,
            ..GenerationConfig::default()
        };
        build_manifest(&cfg, &codes).unwrap()
    }

    #[test]
    fn record_counts() {
        let m = small_manifest();
        let expected: usize = m
            .codes
            .iter()
            .map(|c| variation_count(c.words.len(), 5, 4))
            .sum::<usize>()
            * 3;
        assert_eq!(m.utterances.len(), expected);
    }

    #[test]
    fn split_partitions_records() {
        let m = small_manifest();
        let (train, test) = split_by_speaker(&m, 1).unwrap();
        assert!(test.utterances.iter().all(|u| u.speaker == 1));
        assert_eq!(train.speaker_ids(), vec![0, 2]);
        assert_eq!(train.utterances.len() + test.utterances.len(), m.utterances.len());
        assert!(matches!(split_by_speaker(&m, 9), Err(Error::Argument(_))));

        // Rotating over every speaker puts each record in exactly one test split.
        let mut seen: Vec<String> = Vec::new();
        for s in m.speaker_ids() {
            seen.extend(split_by_speaker(&m, s).unwrap().1.utterances.into_iter().map(|u| u.id));
        }
        seen.sort();
        let mut all: Vec<String> = m.utterances.iter().map(|u| u.id.clone()).collect();
        all.sort();
        assert_eq!(seen, all);
    }

    #[test]
    fn json_round_trip_and_version_check() {
        let m = small_manifest();
        let back = DatasetManifest::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        let bad = m.to_json().replace("manifest-v1", "manifest-v0");
        assert!(matches!(DatasetManifest::from_json(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let m = small_manifest().filtered(|u| u.variation == 0 && u.speaker == 0);
        let a = m.materialize().unwrap();
        let reloaded = DatasetManifest::from_json(&m.to_json()).unwrap();
        let b = reloaded.materialize().unwrap();
        assert_eq!(a, b);
    }
}
