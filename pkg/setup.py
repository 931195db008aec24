import setuptools

BASE_REQUIREMENTS = [
    "pydantic>=1.10,<2",
    "numpy>=1.21",
]
TEST_REQUIREMENTS = [
    "pytest>=7.2.1",
    "pytest-env>=0.8.1",
    "hypothesis>=6.0",
]

with open("README.md", "r") as fh:
    long_description = fh.read()
setuptools.setup(
    name="fusiondet",
    version="0.0.0",
    packages=setuptools.find_packages(include=["fusiondet"], exclude=["build"]),
    description="Fuse a base-class detector and a few-shot novel-class detector into one set of detections, without retraining either.",
    long_description=long_description,
    long_description_content_type="text/markdown",
    license="MIT",
    classifiers=[
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Natural Language :: English",
        "Programming Language :: Python",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3 :: Only",
        "Topic :: Scientific/Engineering :: Image Recognition",
    ],
    python_requires=">=3.8",
    install_requires=BASE_REQUIREMENTS,
    extras_require={
        "test": TEST_REQUIREMENTS,
    },
    entry_points={
        "console_scripts": ["fusiondet=fusiondet.cli:run"],
    },
)
