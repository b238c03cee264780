"""Layer-by-layer output sizes of every assembly, transcribed verbatim.

Shapes are (h, w, c) for feature maps and (d,) for vectors, written as
functions of the channel multiplier ``ch``. Rows are copied as printed,
including the two places where the printed size cannot follow from the
rows around it (see ``LITERAL_CONFLICTS``).
"""


def _trunk(ch):
    return [
        ("Input Spectrogram", (256, 128, 1)),
        ("ResBlock", (128, 64, 1 * ch)),
        ("Non-local block", (128, 64, 1 * ch)),
        ("ResBlock", (64, 32, 1 * ch)),
        ("ResBlock", (32, 16, 2 * ch)),
        ("ResBlock", (16, 8, 4 * ch)),
        ("ResBlock", (8, 4, 8 * ch)),
        ("ResBlock", (4, 2, 16 * ch)),
        ("ResBlock (No Shortcut)", (4, 2, 16 * ch)),
        ("ReLU", (4, 2, 16 * ch)),
        ("Global sum pooling", (1, 1, 16 * ch)),
    ]


def generator(ch):
    return [
        ("Input z", (128,)),
        ("Dense", (4, 2, 16 * ch)),
        ("ResBlock", (8, 4, 16 * ch)),
        ("ResBlock", (16, 8, 16 * ch)),
        ("ResBlock", (32, 16, 16 * ch)),
        ("ResBlock", (64, 32, 16 * ch)),
        ("ResBlock", (128, 64, 16 * ch)),
        ("Non-local block", (128, 64, 16 * ch)),
        ("ResBlock", (256, 128, 1 * ch)),
        ("BN, ReLU", (256, 128, 1)),
        ("Conv [3, 3, 1]", (256, 128, 1)),
        ("Tanh", (256, 128, 1)),
    ]


def supervised_discriminator(ch):
    return _trunk(ch) + [("Sum(embed(y)·h)+(dense → 1)", (1,))]


def unsupervised_discriminator(ch):
    return _trunk(ch) + [("Dense", (1,))]


def encoder(ch, n_classes=10):
    return [("Input z, Input c", (128 + n_classes,))] + [
        ("Dense", (128,)), ("ReLU", (128,)), ("Dense", (128,)), ("ReLU", (128,)),
        ("Dense", (128,))]


def classifier(ch, n_classes=10):
    return [("Input", (128,)), ("Dense", (128,)), ("ReLU", (128,)), ("Dense", (128,)),
            ("ReLU", (128,)), ("Dense", (n_classes,))]


def feature_discriminator(ch):
    return _trunk(ch) + [("Flatten", (16 * ch,))]


def discrimination_head(ch):
    return [("Input z", (128,)), ("Dense", (128,)), ("ReLU", (128,)), ("Dense", (128,)),
            ("ReLU", (128,)), ("Dense", (1,))]


def feature_extractor(ch):
    return [("Input Feature", (16 * ch,)), ("Dense", (16 * ch,)), ("ReLU", (16 * ch,)),
            ("Dense", (16 * ch,)), ("ReLU", (16 * ch,)), ("Dense", (128,))]


def pair_discriminator(ch):
    return _trunk(ch) + [("Concat with input feature", (16 * ch + 128,)), ("Dense", (128,)),
                         ("ReLU", (128,)), ("Dense", (1,))]


# name -> (row builder, assembly key understood by ``trace_assembly``)
TABLES = {
    "supervised generator": (generator, "sup_g"),
    "supervised discriminator": (supervised_discriminator, "sup_d"),
    "unsupervised generator": (generator, "uns_g"),
    "unsupervised discriminator": (unsupervised_discriminator, "uns_d"),
    "encoder": (encoder, "encoder"),
    "classifier": (classifier, "classifier"),
    "feature part of first discriminator": (feature_discriminator, "d_feature"),
    "discrimination part of first discriminator": (discrimination_head, "d_head"),
    "feature extractor": (feature_extractor, "feature_extractor"),
    "pair discriminator": (pair_discriminator, "d_f"),
}

# (table, row index): printed size vs the size implied by neighbouring rows
LITERAL_CONFLICTS = {
    # batch norm keeps the 1*ch channels of the preceding block
    ("supervised generator", 9): lambda ch: (256, 128, 1 * ch),
    ("unsupervised generator", 9): lambda ch: (256, 128, 1 * ch),
    # the head consumes the flattened 16*ch feature of the feature part
    ("discrimination part of first discriminator", 0): lambda ch: (16 * ch,),
}


def trace_assembly(key, ch=16, n_classes=10):
    """Run one assembly on a dummy batch and return its recorded rows."""
    import torch

    from ggan.nets import build_ggan, build_supervised_biggan, build_unsupervised_biggan

    torch.manual_seed(0)
    z = torch.rand(2, 128)
    x = torch.rand(2, 1, 256, 128)
    y = torch.tensor([0, 1])
    trace = []
    with torch.no_grad():
        if key in ("sup_g", "sup_d"):
            G, D = build_supervised_biggan(ch, n_classes)
            G(z, y, trace=trace) if key == "sup_g" else D(x, y, trace=trace)
        elif key in ("uns_g", "uns_d"):
            G, D = build_unsupervised_biggan(ch)
            G(z, trace=trace) if key == "uns_g" else D(x, trace=trace)
        else:
            m = build_ggan(ch, n_classes)
            if key == "encoder":
                m.encoder(z, torch.eye(n_classes)[:2], trace=trace)
            elif key == "classifier":
                m.classifier_x(z, trace=trace)
            elif key == "d_feature":
                m.d_feature(x, trace=trace)
            elif key == "d_head":
                m.d_head(torch.rand(2, m.d_feature.out_dim), trace=trace)
            elif key == "feature_extractor":
                m.feature_extractor(torch.rand(2, m.d_feature.out_dim), trace=trace)
            elif key == "d_f":
                m.d_f(z, x, trace=trace)
    return [(label, tuple(int(s) for s in shape)) for label, shape in trace]


def compare(name, ch=16, literal=True):
    """Return the list of mismatching rows ``(index, expected, got)``."""
    build, key = TABLES[name]
    expected = build(ch)
    if not literal:
        expected = [(label, LITERAL_CONFLICTS[(name, i)](ch)) if (name, i) in LITERAL_CONFLICTS
                    else (label, shape) for i, (label, shape) in enumerate(expected)]
    got = trace_assembly(key, ch)
    bad = [(i, e, g) for i, (e, g) in enumerate(zip(expected, got)) if e != g]
    if len(expected) != len(got):
        bad.append((min(len(expected), len(got)), len(expected), len(got)))
    return bad
