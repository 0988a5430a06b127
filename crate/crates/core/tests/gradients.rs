use cachenlg::corpus::{parse_corpus, Vocabulary};
use cachenlg::decode::{loss, Prepared};
use cachenlg::model::{DecoderKind, Model, ModelConfig};
use cachenlg::neural::{grad_check, ParamStore, Tape};

const BLOCK: &str = "the boy wants a book
(w / want-01 :ARG0 (b / boy) :ARG1 (k / book))
ALIGN 0 2 1
ALIGN 2 3 0
ALIGN 3 5 2
";

fn setup(decoder: DecoderKind) -> (Model, Prepared) {
    let exs = parse_corpus(BLOCK).unwrap();
    let config = ModelConfig {
        decoder,
        k: 3,
        hidden: 16,
        embed_dim: 8,
        edge_dim: 4,
        enc_steps: 2,
    };
    let model = Model::new(
        config,
        Vocabulary::from_corpus(&exs),
        Vocabulary::relations_from_corpus(&exs),
        None,
        42,
    )
    .unwrap();
    let prepared = Prepared::new(&exs[0], 3).unwrap();
    (model, prepared)
}

fn check(decoder: DecoderKind) -> f64 {
    let (mut model, ex) = setup(decoder);
    let net = model.net.clone();
    let value = |s: &ParamStore| {
        let mut tape = Tape::new(s);
        let (l, _) = loss(&mut tape, &net, &ex).unwrap();
        tape.value(l)[0]
    };
    let grads = {
        let mut tape = Tape::new(&model.store);
        let (l, _) = loss(&mut tape, &net, &ex).unwrap();
        tape.backward(l).unwrap()
    };
    let report = grad_check(&mut model.store, &grads, 1e-5, 1e-5, value);
    assert!(report.checked > 1000);
    eprintln!("{decoder}: {report:?}");
    report.max_rel_error
}

#[test]
fn conditioned_loss_gradient_matches_finite_differences() {
    assert!(check(DecoderKind::Conditioned) < 1e-4);
}

#[test]
fn joint_loss_gradient_matches_finite_differences() {
    assert!(check(DecoderKind::Joint) < 1e-4);
}
