use dalab::assets::{bundled_model, trained_model};
use dalab::model::FfnKind;

#[test]
fn bundled_checkpoints_match_training_recipe() {
    std::thread::scope(|s| {
        let handles: Vec<_> = [FfnKind::Relu, FfnKind::Swiglu]
            .into_iter()
            .map(|kind| s.spawn(move || (kind, trained_model(kind).unwrap(), bundled_model(kind).unwrap())))
            .collect();
        for h in handles {
            let (kind, trained, bundled) = h.join().unwrap();
            assert_eq!(trained.config, bundled.config, "{kind:?}");
            assert_eq!(
                trained.to_checkpoint().to_json(),
                bundled.to_checkpoint().to_json(),
                "{kind:?} checkpoint differs from the recipe"
            );
        }
    });
}
