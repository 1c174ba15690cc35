from setuptools import setup

d = dict(
    name="nu_sampler",
    version="0.1.0",
    description="Data augmentation samplers for the Student-t degrees of freedom",
    packages=[
        "nu_sampler",
        "nu_sampler.kernels",
        "nu_sampler.main",
        "nu_sampler.trendcycle",
        "nu_sampler.utils",
    ],
    package_dir={"nu_sampler": "nu_sampler"},
    data_files=[("config", ["config/study.yaml", "config/study_desk.yaml", "config/application.yaml"])],
    python_requires=">=3.8",
    install_requires=["numpy", "scipy", "pandas", "PyYAML", "tqdm"],
    entry_points={"console_scripts": ["nu-sampler=nu_sampler.main.cli:main"]},
)

setup(**d)
