//! Seed-varied ensembles and the transfer set they produce.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dirichlet::clamp_rounding;
use crate::distill::{train_dnn, TrainConfig, TrainLog};
use crate::net::{entropy, softmax_into, CategoricalProbs, Checkpoint, ModelKind};
use crate::{rng, Error, Result};

/// Seed of member `index` under a global seed. Member 0 is the DNN baseline
/// for the same global seed.
pub fn member_seed(global_seed: u64, index: usize) -> u64 {
    rng::derive_seed(global_seed, &format!("member-{index:03}"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<Checkpoint>,
    pub member_seeds: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub size: usize,
    pub num_classes: usize,
    pub seeds: Vec<u64>,
    pub members: Vec<String>,
    pub config_hash: String,
}

impl Ensemble {
    pub fn new(members: Vec<Checkpoint>) -> Result<Self> {
        let first = members.first().ok_or(Error::Empty("ensemble"))?;
        let dims = first.model.dims().to_vec();
        if members.iter().any(|m| m.model.dims() != dims) {
            return Err(Error::Shape("ensemble members differ in architecture".into()));
        }
        let member_seeds = members.iter().map(|m| m.meta.seed).collect();
        Ok(Self { members, member_seeds })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.members[0].model.num_classes()
    }

    pub fn input_dim(&self) -> usize {
        self.members[0].model.input_dim()
    }

    /// Eval-mode logits of every member, `N × M × K`.
    pub fn member_logits(&self, inputs: ArrayView2<f64>) -> Result<Array3<f64>> {
        let (n, m, k) = (inputs.nrows(), self.len(), self.num_classes());
        let mut out = Array3::zeros((n, m, k));
        for (mi, member) in self.members.iter().enumerate() {
            let logits = member.model.predict_logits(inputs)?;
            out.index_axis_mut(Axis(1), mi).assign(&logits);
        }
        Ok(out)
    }

    /// Member softmax outputs at `T = 1`, `N × M × K`.
    pub fn member_probs(&self, inputs: ArrayView2<f64>) -> Result<Array3<f64>> {
        let mut logits = self.member_logits(inputs)?;
        let k = self.num_classes();
        let mut p = vec![0.0; k];
        for mut row in logits.lanes_mut(Axis(2)) {
            softmax_into(&row.to_vec(), 1.0, &mut p);
            row.assign(&ndarray::ArrayView1::from(&p[..]));
        }
        Ok(logits)
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>, config_hash: &str) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut names = Vec::with_capacity(self.len());
        for (i, member) in self.members.iter().enumerate() {
            let name = format!("member_{i:03}.json");
            member.save(dir.join(&name))?;
            names.push(name);
        }
        let manifest = EnsembleManifest {
            size: self.len(),
            num_classes: self.num_classes(),
            seeds: self.member_seeds.clone(),
            members: names,
            config_hash: config_hash.to_string(),
        };
        let mut s = serde_json::to_string_pretty(&manifest)?;
        s.push('\n');
        fs::write(dir.join("manifest.json"), s)?;
        Ok(())
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: EnsembleManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.members.len() != manifest.size || manifest.seeds.len() != manifest.size {
            return Err(Error::Shape(format!(
                "manifest lists {} members and {} seeds for size {}",
                manifest.members.len(),
                manifest.seeds.len(),
                manifest.size
            )));
        }
        let members = manifest
            .members
            .iter()
            .map(|name| Checkpoint::load(dir.join(name)))
            .collect::<Result<Vec<_>>>()?;
        let ens = Self::new(members)?;
        if ens.member_seeds != manifest.seeds || ens.num_classes() != manifest.num_classes {
            return Err(Error::Shape("member checkpoints disagree with manifest".into()));
        }
        Ok(ens)
    }
}

/// Trains `size` members on the same data, each with its own seed for
/// initialisation, shuffling and dropout. Results are in member order
/// regardless of scheduling.
pub fn train_ensemble(
    inputs: ArrayView2<f64>,
    labels: &[usize],
    num_classes: usize,
    cfg: &TrainConfig,
    global_seed: u64,
    size: usize,
) -> Result<(Ensemble, Vec<TrainLog>)> {
    if size == 0 {
        return Err(Error::Config("ensemble size must be at least 1".into()));
    }
    if inputs.nrows() == 0 {
        return Err(Error::Empty("training set"));
    }
    let trained: Vec<(Checkpoint, TrainLog)> = (0..size)
        .into_par_iter()
        .map(|i| {
            let (mut ck, log) = train_dnn(inputs, labels, num_classes, cfg, member_seed(global_seed, i))?;
            ck.meta.model_kind = ModelKind::Member;
            Ok((ck, log))
        })
        .collect::<Result<_>>()?;
    let (members, logs): (Vec<_>, Vec<_>) = trained.into_iter().unzip();
    Ok((Ensemble::new(members)?, logs))
}

fn check_rows(member_probs: &[CategoricalProbs]) -> Result<usize> {
    let k = member_probs.first().ok_or(Error::Empty("ensemble members"))?.len();
    if member_probs.iter().any(|p| p.len() != k) {
        return Err(Error::Shape("members disagree on the number of classes".into()));
    }
    Ok(k)
}

/// Arithmetic mean of the member distributions.
pub fn ensemble_predictive(member_probs: &[CategoricalProbs]) -> Result<CategoricalProbs> {
    let k = check_rows(member_probs)?;
    let mut mean = vec![0.0; k];
    for p in member_probs {
        mean.iter_mut().zip(p.as_slice()).for_each(|(a, b)| *a += b);
    }
    let m = member_probs.len() as f64;
    mean.iter_mut().for_each(|v| *v /= m);
    Ok(CategoricalProbs::new_unchecked(mean))
}

/// Total, expected-data and knowledge uncertainty in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Uncertainties {
    pub total: f64,
    pub expected_data: f64,
    pub knowledge: f64,
}

/// Entropy of the mean, mean of the entropies, and their difference.
pub fn ensemble_uncertainties(member_probs: &[CategoricalProbs]) -> Result<Uncertainties> {
    let mean = ensemble_predictive(member_probs)?;
    let total = mean.entropy();
    let expected_data = member_probs.iter().map(|p| p.entropy()).sum::<f64>() / member_probs.len() as f64;
    Ok(Uncertainties { total, expected_data, knowledge: clamp_rounding(total - expected_data) })
}

/// Same as [`ensemble_uncertainties`] for an `M × K` block of probabilities.
pub(crate) fn uncertainties_of_block(block: ArrayView2<f64>) -> (Vec<f64>, Uncertainties) {
    let m = block.nrows() as f64;
    let mean: Vec<f64> = block.sum_axis(Axis(0)).iter().map(|v| v / m).collect();
    let total = entropy(&mean);
    let expected_data = block.rows().into_iter().map(|r| entropy(r.as_slice().expect("contiguous"))).sum::<f64>() / m;
    (mean, Uncertainties { total, expected_data, knowledge: clamp_rounding(total - expected_data) })
}

/// Inputs paired with every member's logits.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferSet {
    pub inputs: Array2<f64>,
    /// `N × M × K`.
    pub member_logits: Array3<f64>,
    pub labels: Vec<Option<usize>>,
    pub aux_mask: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct TransferJson {
    inputs: Vec<Vec<f64>>,
    labels: Vec<Option<usize>>,
    aux_mask: Vec<bool>,
    member_logits: Vec<Vec<Vec<f64>>>,
}

impl TransferSet {
    pub fn new(inputs: Array2<f64>, member_logits: Array3<f64>, labels: Vec<Option<usize>>, aux_mask: Vec<bool>) -> Result<Self> {
        let n = inputs.nrows();
        let (ln, m, k) = member_logits.dim();
        if ln != n || labels.len() != n || aux_mask.len() != n {
            return Err(Error::Shape(format!(
                "{n} inputs, {ln} logit rows, {} labels, {} aux flags",
                labels.len(),
                aux_mask.len()
            )));
        }
        if n > 0 && (m == 0 || k == 0) {
            return Err(Error::Shape("transfer set needs at least one member and one class".into()));
        }
        if let Some(label) = labels.iter().flatten().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label: *label, num_classes: k });
        }
        let any_labelled = labels.iter().any(Option::is_some);
        if any_labelled && labels.iter().zip(&aux_mask).any(|(l, &aux)| !aux && l.is_none()) {
            return Err(Error::Shape("in-domain rows must all carry labels".into()));
        }
        Ok(Self { inputs, member_logits, labels, aux_mask })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn num_members(&self) -> usize {
        self.member_logits.dim().1
    }

    pub fn num_classes(&self) -> usize {
        self.member_logits.dim().2
    }

    pub fn to_json(&self) -> Result<String> {
        let file = TransferJson {
            inputs: self.inputs.rows().into_iter().map(|r| r.to_vec()).collect(),
            labels: self.labels.clone(),
            aux_mask: self.aux_mask.clone(),
            member_logits: self
                .member_logits
                .outer_iter()
                .map(|block| block.rows().into_iter().map(|r| r.to_vec()).collect())
                .collect(),
        };
        let mut s = serde_json::to_string(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: TransferJson = serde_json::from_str(s)?;
        let n = file.inputs.len();
        let d = file.inputs.first().map_or(0, Vec::len);
        if file.inputs.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("ragged inputs".into()));
        }
        let m = file.member_logits.first().map_or(0, Vec::len);
        let k = file.member_logits.first().and_then(|b| b.first()).map_or(0, Vec::len);
        if file.member_logits.len() != n || file.member_logits.iter().any(|b| b.len() != m || b.iter().any(|r| r.len() != k)) {
            return Err(Error::Shape("ragged member logits".into()));
        }
        let inputs = Array2::from_shape_vec((n, d), file.inputs.into_iter().flatten().collect()).expect("checked");
        let logits = Array3::from_shape_vec((n, m, k), file.member_logits.into_iter().flatten().flatten().collect()).expect("checked");
        Self::new(inputs, logits, file.labels, file.aux_mask)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Evaluates every member (no dropout) on `inputs`, then on `aux` rows, which
/// are flagged in `aux_mask` and carry no labels.
pub fn build_transfer_set(
    ensemble: &Ensemble,
    inputs: ArrayView2<f64>,
    labels: Option<&[usize]>,
    aux: Option<ArrayView2<f64>>,
) -> Result<TransferSet> {
    if inputs.nrows() == 0 {
        return Err(Error::Empty("transfer inputs"));
    }
    if inputs.ncols() != ensemble.input_dim() || aux.is_some_and(|a| a.ncols() != ensemble.input_dim()) {
        return Err(Error::Shape(format!("ensemble expects {} input columns", ensemble.input_dim())));
    }
    if let Some(l) = labels {
        if l.len() != inputs.nrows() {
            return Err(Error::Shape(format!("{} labels for {} inputs", l.len(), inputs.nrows())));
        }
    }
    let all = match aux {
        Some(a) => ndarray::concatenate(Axis(0), &[inputs, a]).map_err(|e| Error::Shape(e.to_string()))?,
        None => inputs.to_owned(),
    };
    let n_main = inputs.nrows();
    let n_aux = all.nrows() - n_main;
    let logits = ensemble.member_logits(all.view())?;
    let mut row_labels: Vec<Option<usize>> = match labels {
        Some(l) => l.iter().map(|&v| Some(v)).collect(),
        None => vec![None; n_main],
    };
    row_labels.extend(std::iter::repeat_n(None, n_aux));
    let mut aux_mask = vec![false; n_main];
    aux_mask.extend(std::iter::repeat_n(true, n_aux));
    TransferSet::new(all, logits, row_labels, aux_mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{softmax, Activation, CheckpointMeta, Mlp};
    use ndarray::array;
    use proptest::prelude::*;

    fn probs(v: &[f64]) -> CategoricalProbs {
        CategoricalProbs::new(v.to_vec()).unwrap()
    }

    fn random_member(seed: u64) -> Checkpoint {
        let mut r = rng::stream(seed, "init");
        let model = Mlp::he_uniform(&[2, 8, 3], Activation::Relu, &mut r).unwrap();
        Checkpoint::new(model, CheckpointMeta { seed, epochs: 0, model_kind: ModelKind::Member })
    }

    #[test]
    fn predictive_examples() {
        assert_eq!(ensemble_predictive(&[probs(&[1.0, 0.0]), probs(&[0.0, 1.0])]).unwrap().as_slice(), &[0.5, 0.5]);
        let p = probs(&[0.2, 0.3, 0.5]);
        let mean = ensemble_predictive(&[p.clone(), p.clone(), p.clone()]).unwrap();
        for (a, b) in mean.as_slice().iter().zip(p.as_slice()) {
            assert!((a - b).abs() < 1e-16);
        }
        let mean = ensemble_predictive(&[probs(&[0.8, 0.2]), probs(&[0.6, 0.4])]).unwrap();
        assert!((mean.as_slice()[0] - 0.7).abs() < 1e-15 && (mean.as_slice()[1] - 0.3).abs() < 1e-15);
        assert!(ensemble_predictive(&[]).is_err());
    }

    #[test]
    fn uncertainty_examples() {
        let ln2 = 2f64.ln();
        let u = ensemble_uncertainties(&[probs(&[1.0, 0.0]), probs(&[0.0, 1.0])]).unwrap();
        assert!((u.total - ln2).abs() < 1e-15 && u.expected_data == 0.0 && (u.knowledge - ln2).abs() < 1e-15);
        let u = ensemble_uncertainties(&[probs(&[0.5, 0.5]), probs(&[0.5, 0.5])]).unwrap();
        assert!((u.total - ln2).abs() < 1e-15 && (u.expected_data - ln2).abs() < 1e-15 && u.knowledge == 0.0);
        let u = ensemble_uncertainties(&[probs(&[0.8, 0.2]), probs(&[0.6, 0.4])]).unwrap();
        assert!((u.total - 0.610_864_302_054_893_5).abs() < 1e-12);
        assert!((u.expected_data - 0.586_707_045_273_722_2).abs() < 1e-12);
        assert!((u.knowledge - 0.024_157_256_781_171_31).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn jensen_and_identity(rows in proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, 3), 1..8)) {
            let members: Vec<CategoricalProbs> = rows.iter().map(|r| {
                let s: f64 = r.iter().sum();
                probs(&r.iter().map(|v| v / s).collect::<Vec<_>>())
            }).collect();
            let u = ensemble_uncertainties(&members).unwrap();
            prop_assert!(u.total >= u.expected_data - 1e-12);
            prop_assert!(u.knowledge >= -1e-12);
            prop_assert!((u.total - u.expected_data - u.knowledge).abs() < 1e-12);
            let same = vec![members[0].clone(); rows.len()];
            prop_assert!(ensemble_uncertainties(&same).unwrap().knowledge.abs() < 1e-12);
        }
    }

    #[test]
    fn transfer_set_single_member_single_input() {
        let member = random_member(1);
        let ens = Ensemble::new(vec![member.clone()]).unwrap();
        let x = array![[0.3, -0.7]];
        let ts = build_transfer_set(&ens, x.view(), Some(&[2]), None).unwrap();
        let direct = member.model.predict_logits(x.view()).unwrap();
        assert_eq!(ts.member_logits.index_axis(Axis(1), 0), direct);
        assert_eq!(ts.aux_mask, vec![false]);
        assert_eq!(ts.labels, vec![Some(2)]);
    }

    #[test]
    fn transfer_set_with_aux_and_consistency() {
        let ens = Ensemble::new((0..4).map(random_member).collect()).unwrap();
        let x = array![[0.3, -0.7], [1.0, 0.2], [-0.4, 0.4]];
        let aux = array![[3.0, 3.0], [-3.0, 2.5]];
        let ts = build_transfer_set(&ens, x.view(), Some(&[0, 1, 2]), Some(aux.view())).unwrap();
        assert_eq!(ts.member_logits.dim(), (5, 4, 3));
        assert_eq!(ts.aux_mask, vec![false, false, false, true, true]);
        assert_eq!(ts.labels[3], None);
        // softmax of stored logits averages to the live ensemble predictive
        let live = ens.member_probs(x.view()).unwrap();
        for i in 0..3 {
            let stored: Vec<CategoricalProbs> = (0..4)
                .map(|m| softmax(&ts.member_logits.slice(ndarray::s![i, m, ..]).to_vec(), 1.0).unwrap())
                .collect();
            let a = ensemble_predictive(&stored).unwrap();
            let (b, _) = uncertainties_of_block(live.index_axis(Axis(0), i));
            for (p, q) in a.as_slice().iter().zip(&b) {
                assert!((p - q).abs() < 1e-12);
            }
        }
        assert!(build_transfer_set(&ens, Array2::zeros((0, 2)).view(), None, None).is_err());
        assert!(build_transfer_set(&ens, Array2::zeros((2, 3)).view(), None, None).is_err());
        let unlabelled = build_transfer_set(&ens, x.view(), None, None).unwrap();
        assert!(unlabelled.labels.iter().all(Option::is_none));
    }

    #[test]
    fn transfer_json_round_trip_is_bitwise() {
        let ens = Ensemble::new((0..3).map(random_member).collect()).unwrap();
        let x = array![[0.1, 0.2], [0.3, -1.0 / 3.0]];
        let ts = build_transfer_set(&ens, x.view(), Some(&[1, 0]), Some(array![[2.5, 1e-300]].view())).unwrap();
        let back = TransferSet::from_json(&ts.to_json().unwrap()).unwrap();
        assert!(back.inputs.iter().zip(ts.inputs.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(back.member_logits.iter().zip(ts.member_logits.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back, ts);
        assert!(ts.to_json().unwrap().contains("\"labels\":[1,0,null]"));
    }

    #[test]
    fn transfer_set_validation() {
        let logits = Array3::zeros((2, 1, 2));
        assert!(TransferSet::new(Array2::zeros((2, 2)), logits.clone(), vec![Some(0), None], vec![false, false]).is_err());
        assert!(TransferSet::new(Array2::zeros((2, 2)), logits.clone(), vec![Some(0), None], vec![false, true]).is_ok());
        assert!(TransferSet::new(Array2::zeros((2, 2)), logits.clone(), vec![Some(2), None], vec![false, true]).is_err());
        assert!(TransferSet::new(Array2::zeros((3, 2)), logits, vec![None; 3], vec![false; 3]).is_err());
    }

    #[test]
    fn ensemble_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ens = Ensemble::new((0..3).map(random_member).collect()).unwrap();
        ens.save_dir(dir.path(), "abc").unwrap();
        let back = Ensemble::load_dir(dir.path()).unwrap();
        assert_eq!(back, ens);
        let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["members"].as_array().unwrap().len(), 3);
        assert_eq!(manifest["config_hash"], "abc");
    }

    #[test]
    fn train_ensemble_is_deterministic_and_size_one_matches_dnn() {
        let mut r = rng::stream(0, "x");
        use rand::Rng;
        let x = Array2::from_shape_fn((60, 2), |_| r.random_range(-1.0..1.0));
        let y: Vec<usize> = x.rows().into_iter().map(|row| usize::from(row[0] > 0.0)).collect();
        let cfg = TrainConfig { hidden: vec![8], epochs: 3, cycle_len: 2, ..TrainConfig::default() };
        let (a, _) = train_ensemble(x.view(), &y, 2, &cfg, 5, 3).unwrap();
        let (b, _) = train_ensemble(x.view(), &y, 2, &cfg, 5, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.member_seeds, (0..3).map(|i| member_seed(5, i)).collect::<Vec<_>>());
        let (single, _) = train_ensemble(x.view(), &y, 2, &cfg, 5, 1).unwrap();
        let (dnn, _) = train_dnn(x.view(), &y, 2, &cfg, member_seed(5, 0)).unwrap();
        assert_eq!(single.members[0].model, dnn.model);
        assert!(train_ensemble(x.view(), &y, 2, &cfg, 5, 0).is_err());
    }
}
