use galnet::data::{synth_generate, ClassMask, Modality, SegSample, SynthConfig};
use galnet::kfold::{kfold_run, FoldSpec, Oracle, Predictor, Trainer, REFERENCE_FOLD_SIZES};
use galnet::Result;

fn corpus(n: usize) -> Vec<SegSample> {
    synth_generate(&SynthConfig::new(Modality::TDisp, n, 8, 8, 3)).unwrap()
}

/// Marks pixels below a fixed depth; imperfect, but deterministic and
/// independent of the training split.
#[derive(Clone, Copy)]
struct Threshold(f32);

impl Predictor for Threshold {
    fn predict(&self, s: &SegSample) -> Result<ClassMask> {
        let data = s.image.data().iter().map(|&v| u8::from(v < self.0)).collect();
        ClassMask::new(s.height(), s.width(), data)
    }
}

impl Trainer for Threshold {
    type Model = Threshold;
    fn fit(&self, _fold: usize, _train: &[&SegSample]) -> Result<Threshold> {
        Ok(*self)
    }
}

#[test]
fn reference_sizes_give_twelve_rows() {
    assert_eq!(REFERENCE_FOLD_SIZES.iter().sum::<usize>(), 53);
    let folds = FoldSpec::from_sizes(&REFERENCE_FOLD_SIZES).unwrap();
    let r = kfold_run(&corpus(53), &folds, &Oracle).unwrap();
    assert_eq!(r.rows.len(), 12);
    assert!(r.rows.iter().chain([&r.mean]).all(|m| m.values() == [1.0; 5]));
    let doc = r.to_document();
    assert!(doc.contains("\n12\t1.000\t1.000\t1.000\t1.000\t1.000\n"));
    assert!(doc.ends_with("mIoU\t1.000\n"));
}

#[test]
fn fold_order_does_not_change_the_means() {
    let samples = corpus(53);
    let folds = FoldSpec::from_sizes(&REFERENCE_FOLD_SIZES).unwrap();
    let model = Threshold(0.5);
    let base = kfold_run(&samples, &folds, &model).unwrap();
    assert!(base.mean.iou < 1.0, "threshold should not be perfect");
    let order = [11, 3, 7, 0, 9, 1, 5, 10, 2, 8, 4, 6];
    let shuffled = kfold_run(&samples, &folds.permuted(&order).unwrap(), &model).unwrap();
    for (k, &i) in order.iter().enumerate() {
        assert_eq!(shuffled.rows[k], base.rows[i]);
    }
    for (a, b) in base.mean.values().iter().zip(shuffled.mean.values()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn trainer_sees_everything_but_the_held_out_fold() {
    struct Spy;
    impl Trainer for Spy {
        type Model = Oracle;
        fn fit(&self, fold: usize, train: &[&SegSample]) -> Result<Oracle> {
            let sizes = [4, 3, 3];
            assert_eq!(train.len(), 10 - sizes[fold]);
            Ok(Oracle)
        }
    }
    kfold_run(&corpus(10), &FoldSpec::even(10, 3).unwrap(), &Spy).unwrap();
}

#[test]
fn folds_must_partition_the_corpus() {
    let samples = corpus(6);
    let overlapping = FoldSpec::new(vec![vec![0, 1, 2], vec![2, 3, 4, 5]]).unwrap();
    assert!(kfold_run(&samples, &overlapping, &Oracle).is_err());
    let short = FoldSpec::from_sizes(&[2, 2]).unwrap();
    assert!(kfold_run(&samples, &short, &Oracle).is_err());
    let out_of_range = FoldSpec::new(vec![vec![0, 1, 2], vec![3, 4, 5, 6]]).unwrap();
    assert!(kfold_run(&samples, &out_of_range, &Oracle).is_err());
    assert!(FoldSpec::new(vec![vec![0], vec![]]).is_err());
    assert!(FoldSpec::even(3, 4).is_err());
}

#[test]
fn even_split_puts_larger_folds_first() {
    let f = FoldSpec::even(11, 4).unwrap();
    let sizes: Vec<usize> = f.folds().iter().map(Vec::len).collect();
    assert_eq!(sizes, [3, 3, 3, 2]);
    f.check_partition(11).unwrap();
}
